//! The `detect`, `analyze`, `evaluate` and `replay-verify` commands.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use serde_json::Value;
use typeforge_core::analysis::Session;
use typeforge_core::evaluation::{parse_manifest, FocalPair, PairObservation, PairRow, Report, SkippedPair};
use typeforge_core::llm::{ChatError, ChatModel};
use typeforge_core::outcome::OutcomeKind;
use typeforge_core::pipeline::{DetectReport, MethodReport, MethodStatus, Pipeline, TestMeta};
use typeforge_core::project::{CallGraph, FunctionRef, SourceIndex};
use typeforge_core::reflection::FewShotAssets;
use typeforge_core::testgen::TEST_FILE_NAME;

use crate::config::RunConfig;
use crate::gateway::{self, ApiSettings, GatewayMode};
use crate::harness::{archive, Harness, MethodExecutor};
use crate::index;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Exit {
    Ok = 0,
    /// Bad input: unknown function, no chain, invalid manifest, or a
    /// replay-verify mismatch.
    Failure = 1,
    /// A model, cassette, runner or file-system failure.
    Infra = 2,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// An error caused by the caller's input rather than the environment.
#[derive(Debug)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn user(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UserError(msg.into()))
}

/// Exit code for an error that escaped a command.
pub fn exit_for(err: &anyhow::Error) -> Exit {
    if err.downcast_ref::<UserError>().is_some() {
        Exit::Failure
    } else {
        Exit::Infra
    }
}

/// Shared, read-only services of one run.
pub struct Services {
    pub model: Box<dyn ChatModel>,
    pub assets: FewShotAssets,
    pub harness: Harness,
}

impl Services {
    pub fn open(cfg: &RunConfig) -> anyhow::Result<Self> {
        let model = gateway::open(
            cfg.mode,
            cfg.cassette.as_deref(),
            ApiSettings::from_env(),
            cfg.retry.clone(),
            &cfg.pipeline.model,
        )?;
        Ok(Services::with_model(cfg, model))
    }

    pub fn with_model(cfg: &RunConfig, model: Box<dyn ChatModel>) -> Self {
        Services { model, assets: FewShotAssets::default(), harness: Harness::new(&cfg.runner, cfg.timeout_s) }
    }
}

/// Runs `work` over `items` on at most `workers` threads, keeping input
/// order in the result.
pub fn fan_out<T: Sync, R: Send>(items: &[T], workers: usize, work: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = work(item);
                slots.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result lock").into_iter().map(|r| r.expect("every item ran")).collect()
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// A project as seen by one run.
pub struct Project<'a> {
    pub root: &'a Path,
    pub index: &'a SourceIndex,
    pub graph: &'a CallGraph,
}

/// One focal method's pipeline run plus the files it left behind.
pub struct MethodRun {
    pub report: MethodReport,
    /// `tests/{project}/{slug}/test_gen.py`, relative to the output dir.
    pub test_path: Option<String>,
}

/// Runs the pipeline for each focal method and writes analysis artifacts,
/// the final test and its `meta.json` under `out`.
pub fn run_methods(
    cfg: &RunConfig,
    services: &Services,
    project: &Project<'_>,
    focals: &[FunctionRef],
    out: &Path,
) -> anyhow::Result<Vec<MethodRun>> {
    let name = &project.index.root;
    let runs = fan_out(focals, cfg.workers, |focal| -> anyhow::Result<MethodRun> {
        let method_dir = out.join("tests").join(name).join(focal.slug());
        let executor = MethodExecutor { harness: &services.harness, project_root: project.root, method_dir: method_dir.clone() };
        let pipeline = Pipeline {
            index: project.index,
            graph: project.graph,
            model: services.model.as_ref(),
            executor: &executor,
            assets: &services.assets,
            cfg: &cfg.pipeline,
        };
        let report = pipeline.detect_method(focal);
        if let Some(a) = &report.analysis {
            write(&out.join("analysis").join(format!("{}.analysis.json", focal.slug())), &(a.to_json() + "\n"))?;
        }
        let mut test_path = None;
        if let (Some(last), Some(meta)) = (report.final_test(), TestMeta::from_report(&report)) {
            let path = method_dir.join(TEST_FILE_NAME);
            write(&path, &last.test.source)?;
            write(&method_dir.join("meta.json"), &(serde_json::to_string_pretty(&meta)? + "\n"))?;
            test_path = Some(rel(out, &path));
        }
        Ok(MethodRun { report, test_path })
    });
    runs.into_iter().collect()
}

fn resolve_focals(index: &SourceIndex, selectors: &[String]) -> anyhow::Result<Vec<FunctionRef>> {
    if selectors.is_empty() {
        return Ok(index.functions().into_iter().collect());
    }
    selectors.iter().map(|s| index.resolve(s).map_err(|e| user(e.to_string()))).collect()
}

fn excluded_out(cfg: &RunConfig, root: &Path) -> Vec<String> {
    let mut exclude = cfg.exclude.clone();
    let (Ok(root), Ok(out)) = (root.canonicalize(), cfg.out.canonicalize().or_else(|_| {
        std::fs::create_dir_all(&cfg.out)?;
        cfg.out.canonicalize()
    })) else {
        return exclude;
    };
    if let Ok(inside) = out.strip_prefix(&root) {
        exclude.push(format!("{}/**", inside.to_string_lossy().replace('\\', "/")));
    }
    exclude
}

fn load_project(cfg: &RunConfig, root: &Path) -> anyhow::Result<(SourceIndex, CallGraph)> {
    index::load(root, &cfg.include, &excluded_out(cfg, root))
}

pub struct DetectRun {
    pub exit: Exit,
    pub report: DetectReport,
    pub methods: Vec<MethodRun>,
}

/// `typeforge detect`: the full pipeline over the selected (default: all)
/// functions. Writes `detect.json` into the output directory.
pub fn detect(cfg: &RunConfig, services: &Services, selectors: &[String]) -> anyhow::Result<DetectRun> {
    let root = cfg.project_root.as_path();
    let (index, graph) = load_project(cfg, root)?;
    index::write_cache(&cfg.out, &index, &graph)?;
    let focals = resolve_focals(&index, selectors)?;
    let project = Project { root, index: &index, graph: &graph };
    let methods = run_methods(cfg, services, &project, &focals, &cfg.out)?;
    let reports: Vec<MethodReport> = methods.iter().map(|m| m.report.clone()).collect();
    let paths: Vec<Option<String>> = methods.iter().map(|m| m.test_path.clone()).collect();
    let now = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let report = DetectReport::new(&index.root, &now, &reports, &paths);
    write(&cfg.out.join("detect.json"), &report.to_json())?;
    let exit = if reports.iter().any(MethodReport::infra_failure) { Exit::Infra } else { Exit::Ok };
    Ok(DetectRun { exit, report, methods })
}

/// `typeforge analyze <selector>`: constraint analysis only. Returns the
/// artifact path.
pub fn analyze(cfg: &RunConfig, services: &Services, selector: &str) -> anyhow::Result<(Exit, PathBuf)> {
    let root = cfg.project_root.as_path();
    let (index, graph) = load_project(cfg, root)?;
    let focal = index.resolve(selector).map_err(|e| user(e.to_string()))?;
    let pipeline = Pipeline {
        index: &index,
        graph: &graph,
        model: services.model.as_ref(),
        executor: &NoExecutor,
        assets: &services.assets,
        cfg: &cfg.pipeline,
    };
    let mut session = Session::new(services.model.as_ref(), &cfg.pipeline.model);
    let mut report = MethodReport::new(&focal);
    pipeline.analyze(&focal, &mut session, &mut report).map_err(anyhow::Error::new)?;
    let Some(artifact) = report.analysis else {
        let why = report.diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return Err(user(format!("no invocation chain for {focal}: {why}")));
    };
    let path = cfg.out.join("analysis").join(format!("{}.analysis.json", focal.slug()));
    write(&path, &(artifact.to_json() + "\n"))?;
    Ok((Exit::Ok, path))
}

struct NoExecutor;

impl typeforge_core::pipeline::Executor for NoExecutor {
    fn execute(
        &self,
        _test: &typeforge_core::testgen::GeneratedTest,
        _attempt: usize,
    ) -> typeforge_core::outcome::TestOutcome {
        typeforge_core::outcome::TestOutcome::infra("analysis does not execute tests")
    }
}

pub struct EvaluateRun {
    pub exit: Exit,
    pub report: Report,
}

enum PairResult {
    Row(PairRow, bool),
    Skipped(SkippedPair),
}

/// `typeforge evaluate <manifest>`: detector runs on both snapshots of each
/// pair, plus a replay of the buggy run's reported test on the fixed
/// snapshot. Writes `report.json` and `report.md`.
pub fn evaluate(cfg: &RunConfig, services: &Services, manifest: &Path) -> anyhow::Result<EvaluateRun> {
    let text = std::fs::read_to_string(manifest).map_err(|e| user(format!("cannot read manifest {}: {e}", manifest.display())))?;
    let pairs = parse_manifest(&text).map_err(|e| user(format!("invalid manifest {}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let benchmark = manifest.file_stem().map_or("benchmark".into(), |s| s.to_string_lossy().into_owned());
    // pairs run one at a time; each detector run fans out internally
    let results: Vec<PairResult> =
        pairs.iter().map(|p| evaluate_pair(cfg, services, base, p)).collect::<anyhow::Result<_>>()?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut model_error = false;
    for r in results {
        match r {
            PairResult::Row(row, err) => {
                model_error |= err;
                rows.push(row);
            }
            PairResult::Skipped(s) => skipped.push(s),
        }
    }
    let report = Report::new(&benchmark, rows, skipped);
    write(&cfg.out.join("report.json"), &report.to_json())?;
    write(&cfg.out.join("report.md"), &report.to_markdown())?;
    Ok(EvaluateRun { exit: if model_error { Exit::Infra } else { Exit::Ok }, report })
}

struct Snapshot {
    root: PathBuf,
    index: SourceIndex,
    graph: CallGraph,
    focal: FunctionRef,
}

fn open_snapshot(cfg: &RunConfig, base: &Path, r: &typeforge_core::evaluation::SnapshotRef) -> Result<Snapshot, String> {
    let root = base.join(&r.path);
    if !root.is_dir() {
        return Err(format!("snapshot {} does not exist", root.display()));
    }
    let (index, graph) = load_project(cfg, &root).map_err(|e| format!("cannot index {}: {e:#}", root.display()))?;
    let focal = index.resolve(&r.function).map_err(|e| format!("{}: {e}", root.display()))?;
    Ok(Snapshot { root, index, graph, focal })
}

fn evaluate_pair(cfg: &RunConfig, services: &Services, base: &Path, pair: &FocalPair) -> anyhow::Result<PairResult> {
    let skip = |reason: String| Ok(PairResult::Skipped(SkippedPair { id: pair.id.clone(), reason }));
    if let Err(e) = pair.check() {
        return skip(e);
    }
    let buggy = match open_snapshot(cfg, base, &pair.buggy) {
        Ok(s) => s,
        Err(e) => return skip(e),
    };
    let fixed = match open_snapshot(cfg, base, &pair.fixed) {
        Ok(s) => s,
        Err(e) => return skip(e),
    };
    let out = cfg.out.join("eval").join(typeforge_core::text::slug(&pair.id));
    let run_on = |snap: &Snapshot, side: &str| -> anyhow::Result<MethodReport> {
        let project = Project { root: &snap.root, index: &snap.index, graph: &snap.graph };
        let mut runs = run_methods(cfg, services, &project, std::slice::from_ref(&snap.focal), &out.join(side))?;
        Ok(runs.remove(0).report)
    };
    let on_buggy = run_on(&buggy, "buggy")?;
    let on_fixed = run_on(&fixed, "fixed")?;

    let mut notes = vec![format!("buggy: {}", on_buggy.status.as_str()), format!("fixed: {}", on_fixed.status.as_str())];
    let mut replay_hit = false;
    if let Some(ev) = &on_buggy.evidence {
        let dir = out.join("replay");
        let path = dir.join(TEST_FILE_NAME);
        write(&path, &ev.test_source)?;
        let (outcome, raw) = services.harness.run(&path, &fixed.root);
        archive(&dir, &ev.test_source, &outcome, &raw)?;
        replay_hit = outcome.kind == OutcomeKind::TypeErrorTriggered;
        notes.push(format!("replay on fixed: {}", outcome.kind));
    }
    let infra = matches!(on_buggy.status, MethodStatus::Error | MethodStatus::Diagnostic) || on_buggy.infra_failure();
    let model_error = on_buggy.status == MethodStatus::Error || on_fixed.status == MethodStatus::Error;
    let observation = PairObservation {
        id: pair.id.clone(),
        project: pair.project.clone(),
        reported_on_buggy: on_buggy.reported(),
        reported_on_fixed_replay: replay_hit,
        reported_on_fixed: on_fixed.reported(),
        infra,
        notes,
    };
    Ok(PairResult::Row(PairRow::label(observation), model_error))
}

/// Files under `dir` keyed by relative path.
fn snapshot_tree(dir: &Path) -> anyhow::Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry?;
        if entry.file_type().is_file() {
            files.insert(rel(dir, entry.path()), std::fs::read(entry.path())?);
        }
    }
    Ok(files)
}

/// Drops `generated_at` from `detect.json`; every other byte must match.
pub fn normalized(path: &str, bytes: &[u8]) -> Vec<u8> {
    if path != "detect.json" {
        return bytes.to_vec();
    }
    match serde_json::from_slice::<Value>(bytes) {
        Ok(Value::Object(mut m)) => {
            m.remove("generated_at");
            serde_json::to_vec_pretty(&Value::Object(m)).unwrap_or_else(|_| bytes.to_vec())
        }
        _ => bytes.to_vec(),
    }
}

/// Paths whose contents differ between two output trees.
pub fn diff_trees(a: &Path, b: &Path) -> anyhow::Result<Vec<String>> {
    let (ta, tb) = (snapshot_tree(a)?, snapshot_tree(b)?);
    let mut keys: Vec<&String> = ta.keys().chain(tb.keys()).collect();
    keys.sort();
    keys.dedup();
    Ok(keys
        .into_iter()
        .filter(|k| match (ta.get(*k), tb.get(*k)) {
            (Some(x), Some(y)) => normalized(k, x) != normalized(k, y),
            _ => true,
        })
        .cloned()
        .collect())
}

/// `typeforge replay-verify`: two replay runs into fresh directories must
/// produce identical outputs.
pub fn replay_verify(cfg: &RunConfig, selectors: &[String]) -> anyhow::Result<(Exit, Vec<String>)> {
    if cfg.mode != GatewayMode::Replay {
        return Err(user("replay-verify needs --mode replay"));
    }
    let base = cfg.out.join("replay-verify");
    let mut dirs = Vec::new();
    for n in 1..=2 {
        let dir = base.join(format!("run-{n}"));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        let run_cfg = RunConfig { out: dir.clone(), ..cfg.clone() };
        let services = Services::open(&run_cfg)?;
        let run = detect(&run_cfg, &services, selectors)?;
        if run.exit != Exit::Ok {
            return Ok((run.exit, vec![format!("run {n} exited with {:?}", run.exit)]));
        }
        dirs.push(dir);
    }
    let diffs = diff_trees(&dirs[0], &dirs[1])?;
    Ok((if diffs.is_empty() { Exit::Ok } else { Exit::Failure }, diffs))
}

/// Message for a model error that ended a method, naming the digest on a
/// cassette miss.
pub fn describe_model_error(e: &ChatError) -> String {
    match e {
        ChatError::CassetteMiss { digest } => format!("cassette has no entry for digest {digest}"),
        other => other.to_string(),
    }
}
