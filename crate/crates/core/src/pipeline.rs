//! Per-focal-method orchestration: chain sampling, constraint analysis,
//! risk selection, generation, execution and reflection.

use serde::{Deserialize, Serialize};

use crate::analysis::{
    analyze_chain, assess_risk, select_constraints, AnalysisArtifact, ChainAnalysis, RiskAssessment, Session,
};
use crate::constraint::{MethodConstraint, Mode};
use crate::diag::Diagnostic;
use crate::llm::{ChatError, ChatModel, ModelConfig};
use crate::outcome::{dispatch, NextAction, OutcomeKind, TestOutcome};
use crate::prelude::*;
use crate::project::{extract_chains, sample_representative_chain, CallGraph, FunctionRef, InvocationChain, SourceIndex};
use crate::reflection::{self, chain_sources, Decision, FewShotAssets, Reflection, ReflectionInput};
use crate::sanitize::AssertNames;
use crate::testgen::{self, GenSpec, GeneratedTest};
use crate::text::sha256_hex;

const STAGE: &str = "pipeline";

/// Runs a generated test. Implementations archive whatever they need; the
/// pipeline only sees the classified outcome.
pub trait Executor: Sync {
    /// `attempt` counts executions for this focal method from zero.
    fn execute(&self, test: &GeneratedTest, attempt: usize) -> TestOutcome;
}

impl<E: Executor + ?Sized> Executor for &E {
    fn execute(&self, test: &GeneratedTest, attempt: usize) -> TestOutcome {
        (**self).execute(test, attempt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub max_depth: usize,
    /// Reflection-driven regenerations per method.
    pub refine_budget: u32,
    pub always_arbitrate: bool,
    pub dry_run: bool,
    pub context_budget: usize,
    pub assert_names: AssertNames,
    pub model: ModelConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_depth: crate::project::DEFAULT_MAX_DEPTH,
            refine_budget: 1,
            always_arbitrate: false,
            dry_run: false,
            context_budget: testgen::DEFAULT_CONTEXT_BUDGET,
            assert_names: AssertNames::default(),
            model: ModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodStatus {
    /// A TypeError that reflection accepted as a true positive.
    Reported,
    /// Tests ran but no accepted type error came out of them.
    NoBugFound,
    /// A revised test still failed without a type error.
    Discarded,
    /// The test timed out or the runner failed.
    Diagnostic,
    /// Analysis or generation produced nothing to run.
    Skipped,
    /// `--dry-run`: analysis only.
    DryRun,
    /// The model could not be reached or the cassette had no answer.
    Error,
}

impl MethodStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodStatus::Reported => "reported",
            MethodStatus::NoBugFound => "no_bug_found",
            MethodStatus::Discarded => "discarded",
            MethodStatus::Diagnostic => "diagnostic",
            MethodStatus::Skipped => "skipped",
            MethodStatus::DryRun => "dry_run",
            MethodStatus::Error => "error",
        }
    }
}

/// One execution of one generated test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub attempt: usize,
    pub test: GeneratedTest,
    pub source_sha256: String,
    pub outcome: TestOutcome,
    pub action: NextAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<Reflection>,
}

/// What a human needs to triage a reported bug without rerunning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub focal: FunctionRef,
    pub chain: InvocationChain,
    pub mode: Mode,
    pub constraints: Vec<MethodConstraint>,
    pub test_source: String,
    pub exception_class: String,
    pub message: String,
    pub traceback: String,
    pub reflection: Reflection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub focal: FunctionRef,
    pub status: MethodStatus,
    pub chains_found: usize,
    pub chain: Option<InvocationChain>,
    pub risk: Option<RiskAssessment>,
    pub selected_mode: Option<Mode>,
    pub summary: Option<String>,
    pub attempts: Vec<Attempt>,
    /// Number of model-produced tests, bounded by 2 + refine budget.
    pub generations: u32,
    pub llm_calls: usize,
    pub evidence: Option<Evidence>,
    pub diagnostics: Vec<Diagnostic>,
    /// Set when the method ended in [`MethodStatus::Error`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Present unless the method failed before analysis finished.
    #[serde(skip)]
    pub analysis: Option<AnalysisArtifact>,
}

impl MethodReport {
    pub fn new(focal: &FunctionRef) -> Self {
        MethodReport {
            focal: focal.clone(),
            status: MethodStatus::Skipped,
            chains_found: 0,
            chain: None,
            risk: None,
            selected_mode: None,
            summary: None,
            attempts: Vec::new(),
            generations: 0,
            llm_calls: 0,
            evidence: None,
            diagnostics: Vec::new(),
            error: None,
            analysis: None,
        }
    }

    pub fn reported(&self) -> bool {
        self.status == MethodStatus::Reported
    }

    /// The test kept as the method's single test file: the reported one,
    /// otherwise the last one executed.
    pub fn final_test(&self) -> Option<&Attempt> {
        self.attempts.last()
    }

    /// A runner failure or a model error, as opposed to an ordinary verdict.
    pub fn infra_failure(&self) -> bool {
        self.status == MethodStatus::Error
            || self.attempts.iter().any(|a| a.outcome.kind == OutcomeKind::Infra)
    }
}

/// Sidecar written next to a method's `test_gen.py`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMeta {
    pub schema_version: u32,
    pub focal: FunctionRef,
    pub chain_id: String,
    pub mode: Mode,
    pub iteration: u32,
    pub status: MethodStatus,
    pub source_sha256: String,
    pub raw_source_sha256: String,
    pub attempts: Vec<AttemptMeta>,
    pub reflections: Vec<Reflection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptMeta {
    pub attempt: usize,
    pub iteration: u32,
    pub outcome: OutcomeKind,
    pub action: NextAction,
    pub source_sha256: String,
}

impl TestMeta {
    pub fn from_report(r: &MethodReport) -> Option<Self> {
        let last = r.final_test()?;
        Some(TestMeta {
            schema_version: crate::SCHEMA_VERSION,
            focal: r.focal.clone(),
            chain_id: last.test.chain_id.clone(),
            mode: last.test.mode,
            iteration: last.test.iteration,
            status: r.status,
            source_sha256: last.source_sha256.clone(),
            raw_source_sha256: sha256_hex(last.test.raw_source.as_bytes()),
            attempts: r
                .attempts
                .iter()
                .map(|a| AttemptMeta {
                    attempt: a.attempt,
                    iteration: a.test.iteration,
                    outcome: a.outcome.kind,
                    action: a.action,
                    source_sha256: a.source_sha256.clone(),
                })
                .collect(),
            reflections: r.attempts.iter().filter_map(|a| a.reflection.clone()).collect(),
        })
    }
}

/// Shared, read-only services for every focal method.
pub struct Pipeline<'a> {
    pub index: &'a SourceIndex,
    pub graph: &'a CallGraph,
    pub model: &'a dyn ChatModel,
    pub executor: &'a dyn Executor,
    pub assets: &'a FewShotAssets,
    pub cfg: &'a PipelineConfig,
}

impl Pipeline<'_> {
    /// Chain sampling and both constraint passes plus risk selection.
    pub fn analyze(&self, focal: &FunctionRef, session: &mut Session<'_>, report: &mut MethodReport) -> Result<Option<ChainAnalysis>, ChatError> {
        let chains = extract_chains(self.graph, focal, self.cfg.max_depth);
        report.chains_found = chains.len();
        let chain = match sample_representative_chain(&chains) {
            Ok(c) => c.clone(),
            Err(e) => {
                report.diagnostics.push(Diagnostic::error(STAGE, e.to_string()));
                return Ok(None);
            }
        };
        report.chain = Some(chain.clone());
        let analysis = analyze_chain(session, self.index, &chain)?;
        let trigger_steps = analysis.steps_for(Mode::Trigger);
        let (risk, risk_diag) = assess_risk(session, &chain, &analysis.constraints.trigger_seq, &trigger_steps)?;
        report.diagnostics.extend(analysis.diagnostics.iter().cloned());
        report.diagnostics.extend(risk_diag);
        let selected = select_constraints(&risk, &analysis.constraints.trigger_seq, &analysis.constraints.normal_seq).map(|(_, m)| m);
        report.selected_mode = selected;
        report.analysis = Some(AnalysisArtifact::new(&analysis, Some(risk.clone()), selected));
        report.risk = Some(risk);
        Ok(Some(analysis))
    }

    /// Runs the whole pipeline for one focal method. Model failures end the
    /// method with [`MethodStatus::Error`] rather than aborting the run.
    pub fn detect_method(&self, focal: &FunctionRef) -> MethodReport {
        let mut report = MethodReport::new(focal);
        let mut session = Session::new(self.model, &self.cfg.model);
        if let Err(e) = self.run(focal, &mut session, &mut report) {
            report.status = MethodStatus::Error;
            report.error = Some(e.to_string());
            report.diagnostics.push(Diagnostic::error(STAGE, e.to_string()));
        }
        report.llm_calls = session.calls;
        report
    }

    fn run(&self, focal: &FunctionRef, session: &mut Session<'_>, report: &mut MethodReport) -> Result<(), ChatError> {
        let Some(analysis) = self.analyze(focal, session, report)? else {
            return Ok(());
        };
        let Some(mode) = report.selected_mode else {
            report.diagnostics.push(Diagnostic::warning(STAGE, "both constraint passes failed; nothing to generate from"));
            return Ok(());
        };
        if self.cfg.dry_run {
            report.status = MethodStatus::DryRun;
            return Ok(());
        }
        let chain = &analysis.constraints.chain;
        let entry = chain.entry().clone();
        let constraints: &[MethodConstraint] = analysis.constraints.seq(mode);

        let context = match testgen::collect_intra_file_context(&entry, self.index) {
            Ok(cx) => cx.render(self.cfg.context_budget),
            Err(e) => {
                report.diagnostics.push(Diagnostic::warning(STAGE, format!("no intra-file context: {e}")));
                String::new()
            }
        };
        let steps = analysis.steps_for(mode);
        let mut conv = testgen::assemble_memory(&steps, analysis.focal_record(mode), &entry, &context);
        let entry_source = self.index.source_of(&entry).unwrap_or_default();
        report.summary = testgen::summarize_method(session, &mut conv, &entry, entry_source)?;
        if report.summary.is_none() {
            report.diagnostics.push(Diagnostic::warning(STAGE, "functionality summary was empty; skipped"));
        }

        let chain_id = chain.id();
        let spec = GenSpec { entry: &entry, focal, chain_id: &chain_id, mode, names: &self.cfg.assert_names };
        report.generations += 1;
        let mut test = match testgen::generate_test(session, &mut conv, &spec)? {
            Ok(t) => t,
            Err(e) => {
                report.diagnostics.push(Diagnostic::error(STAGE, format!("no usable test generated: {e}")));
                return Ok(());
            }
        };
        let sources = chain_sources(self.index, chain);
        let mut refinements = 0u32;
        loop {
            report.diagnostics.extend(test.diagnostics.iter().cloned());
            let attempt = report.attempts.len();
            let outcome = self.executor.execute(&test, attempt);
            let action = dispatch(outcome.kind, test.iteration);
            report.attempts.push(Attempt {
                attempt,
                source_sha256: sha256_hex(test.source.as_bytes()),
                test: test.clone(),
                outcome: outcome.clone(),
                action,
                reflection: None,
            });
            let next = match action {
                NextAction::RecordNegative => {
                    report.status = MethodStatus::NoBugFound;
                    return Ok(());
                }
                NextAction::RecordDiagnostic => {
                    report.status = MethodStatus::Diagnostic;
                    report.diagnostics.push(Diagnostic::warning(
                        STAGE,
                        format!("test execution ended with {}: {}", outcome.kind, outcome.run.message),
                    ));
                    return Ok(());
                }
                NextAction::Discard => {
                    report.status = MethodStatus::Discarded;
                    return Ok(());
                }
                NextAction::SelfDebug => {
                    report.generations += 1;
                    testgen::self_debug(session, &mut conv, &test, &outcome.run, &spec)?
                }
                NextAction::Reflect => {
                    let input = ReflectionInput {
                        chain,
                        constraints,
                        mode,
                        chain_sources: &sources,
                        test: &test,
                        run: &outcome.run,
                    };
                    let verdict = reflection::reflect(session, self.assets, &input, self.cfg.always_arbitrate)?;
                    let fin = verdict.final_verdict.clone();
                    report.attempts.last_mut().expect("just pushed").reflection = Some(verdict.clone());
                    if fin.decision == Decision::TruePositive {
                        report.status = MethodStatus::Reported;
                        report.evidence = Some(Evidence {
                            focal: focal.clone(),
                            chain: chain.clone(),
                            mode,
                            constraints: constraints.to_vec(),
                            test_source: test.source.clone(),
                            exception_class: outcome.run.exception_class.clone(),
                            message: outcome.run.message.clone(),
                            traceback: outcome.run.traceback(),
                            reflection: verdict,
                        });
                        return Ok(());
                    }
                    if refinements >= self.cfg.refine_budget {
                        report.status = MethodStatus::NoBugFound;
                        report.diagnostics.push(Diagnostic::info(STAGE, "refinement budget exhausted"));
                        return Ok(());
                    }
                    refinements += 1;
                    report.generations += 1;
                    reflection::refine(session, &mut conv, &test, &fin, &spec)?
                }
            };
            match next {
                Ok(t) => test = t,
                Err(e) => {
                    // a revision that never produced code counts like a
                    // failed revision
                    report.status = if action == NextAction::SelfDebug { MethodStatus::Discarded } else { MethodStatus::NoBugFound };
                    report.diagnostics.push(Diagnostic::warning(STAGE, format!("revision produced no usable test: {e}")));
                    return Ok(());
                }
            }
        }
    }
}

/// `detect.json`: every method's outcome plus the reported bugs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReport {
    pub schema_version: u32,
    pub project: String,
    /// The only non-deterministic field.
    pub generated_at: String,
    pub methods: Vec<MethodSummary>,
    pub detected: Vec<Evidence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub focal: String,
    pub status: MethodStatus,
    pub chain: Option<String>,
    pub selected_mode: Option<Mode>,
    pub attempts: usize,
    pub generations: u32,
    pub llm_calls: usize,
    /// Relative to the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MethodSummary {
    pub fn new(r: &MethodReport, test_path: Option<String>) -> Self {
        MethodSummary {
            focal: r.focal.id(),
            status: r.status,
            chain: r.chain.as_ref().map(InvocationChain::describe),
            selected_mode: r.selected_mode,
            attempts: r.attempts.len(),
            generations: r.generations,
            llm_calls: r.llm_calls,
            test_path,
            diagnostics: r.diagnostics.clone(),
            error: r.error.clone(),
        }
    }
}

impl DetectReport {
    pub fn new(project: &str, generated_at: &str, reports: &[MethodReport], test_paths: &[Option<String>]) -> Self {
        let mut methods: Vec<MethodSummary> =
            reports.iter().zip(test_paths.iter().cloned().chain(core::iter::repeat(None))).map(|(r, p)| MethodSummary::new(r, p)).collect();
        methods.sort_by(|a, b| a.focal.cmp(&b.focal));
        let mut detected: Vec<Evidence> = reports.iter().filter_map(|r| r.evidence.clone()).collect();
        detected.sort_by(|a, b| a.focal.cmp(&b.focal));
        DetectReport { schema_version: crate::SCHEMA_VERSION, project: project.into(), generated_at: generated_at.into(), methods, detected }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Conversation, FnModel};
    use crate::outcome::{FailureKind, RunResult};
    use crate::project::{build_call_graph, index_project};
    use crate::prompts::Agent;
    use core::cell::RefCell;
    use std::sync::Mutex;

    const SRC: &str = "def entry(x):\n    return helper(x)\n\ndef helper(y):\n    return y + 1\n";

    struct Scripted {
        outcomes: Mutex<RefCell<Vec<RunResult>>>,
    }

    impl Scripted {
        fn new(mut runs: Vec<RunResult>) -> Self {
            runs.reverse();
            Scripted { outcomes: Mutex::new(RefCell::new(runs)) }
        }
    }

    impl Executor for Scripted {
        fn execute(&self, _test: &GeneratedTest, _attempt: usize) -> TestOutcome {
            let guard = self.outcomes.lock().unwrap();
            let run = guard.borrow_mut().pop().unwrap_or_else(|| RunResult::passed(0.0));
            TestOutcome::from_run(run)
        }
    }

    fn answer(conv: &Conversation, tp: bool) -> String {
        match Agent::identify(conv) {
            Some(Agent::TriggerConstraint | Agent::NormalConstraint) => {
                "```json\n{\"y\": {\"kind\": \"primitive\", \"type_name\": \"str\"}}\n```".into()
            }
            Some(Agent::Propagation) => "```json\n{\"x\": {\"kind\": \"primitive\", \"type_name\": \"str\"}}\n```".into(),
            Some(Agent::Risk) => "{\"risk\": \"high\", \"justification\": \"str reaches +\"}".into(),
            Some(Agent::TestGeneration) => {
                if conv.last_user().unwrap_or("").starts_with("Summarize") {
                    "Adds one.".into()
                } else {
                    "```python\nfrom m import entry\n\ndef test_entry():\n    entry('a')\n```".into()
                }
            }
            Some(Agent::TypeConsistency | Agent::SemanticValidity) => {
                let d = if tp { "true_positive" } else { "false_positive" };
                format!("{{\"decision\": \"{d}\", \"confidence\": \"high\", \"rationale\": \"r\", \"suggestions\": \"s\"}}")
            }
            Some(Agent::Arbiter) | None => "{}".into(),
        }
    }

    fn run_with(tp: bool, runs: Vec<RunResult>, cfg: &PipelineConfig) -> MethodReport {
        let idx = index_project("p", [("m.py", SRC)]);
        let graph = build_call_graph(&idx);
        let model = FnModel(move |c: &Conversation| Ok(answer(c, tp)));
        let exec = Scripted::new(runs);
        let assets = FewShotAssets::default();
        let p = Pipeline { index: &idx, graph: &graph, model: &model, executor: &exec, assets: &assets, cfg };
        p.detect_method(&idx.resolve("helper").unwrap())
    }

    fn type_error() -> RunResult {
        RunResult::failed(FailureKind::TypeError, "TypeError", "can only concatenate str")
    }

    #[test]
    fn true_positive_is_reported_with_evidence() {
        let r = run_with(true, vec![type_error()], &PipelineConfig::default());
        assert_eq!(r.status, MethodStatus::Reported, "{:?}", r.diagnostics);
        assert_eq!(r.selected_mode, Some(Mode::Trigger));
        let ev = r.evidence.as_ref().unwrap();
        assert_eq!(ev.chain.describe(), r.chain.as_ref().unwrap().describe());
        assert_eq!(ev.constraints.len(), 2);
        assert_eq!(r.attempts.len(), 1);
        // 2 focal + 2 propagation + risk + summary + generation + 2 reviewers
        assert_eq!(r.llm_calls, 9);
    }

    #[test]
    fn false_positive_respects_refine_budget() {
        for budget in [0u32, 1, 2] {
            let cfg = PipelineConfig { refine_budget: budget, ..Default::default() };
            let r = run_with(false, vec![type_error(); 5], &cfg);
            assert_eq!(r.status, MethodStatus::NoBugFound);
            assert_eq!(r.generations, 1 + budget);
            assert_eq!(r.attempts.len() as u32, 1 + budget);
            assert_eq!(r.attempts.last().unwrap().test.iteration, if budget == 0 { 0 } else { 1 + budget });
        }
    }

    #[test]
    fn other_failure_then_discard() {
        let other = RunResult::failed(FailureKind::OtherError, "KeyError", "'x'");
        let r = run_with(true, vec![other.clone(), other], &PipelineConfig::default());
        assert_eq!(r.status, MethodStatus::Discarded);
        let iters: Vec<u32> = r.attempts.iter().map(|a| a.test.iteration).collect();
        assert_eq!(iters, [0, 1]);
        assert_eq!(r.generations, 2);
    }

    #[test]
    fn generation_budget_holds_on_every_path() {
        let other = RunResult::failed(FailureKind::OtherError, "KeyError", "'x'");
        let cfg = PipelineConfig::default();
        let r = run_with(false, vec![other, type_error(), type_error(), type_error()], &cfg);
        assert!(r.generations <= 2 + cfg.refine_budget);
        assert_eq!(r.generations, 3);
        assert_eq!(r.status, MethodStatus::NoBugFound);
    }

    #[test]
    fn dry_run_and_diagnostics() {
        let cfg = PipelineConfig { dry_run: true, ..Default::default() };
        let r = run_with(true, vec![], &cfg);
        assert_eq!(r.status, MethodStatus::DryRun);
        assert!(r.attempts.is_empty() && r.analysis.is_some());
        let r = run_with(true, vec![RunResult::failed(FailureKind::Timeout, "", "timed out")], &PipelineConfig::default());
        assert_eq!(r.status, MethodStatus::Diagnostic);
        assert!(!r.infra_failure());
        let r = run_with(true, vec![RunResult::infra("runner crashed")], &PipelineConfig::default());
        assert!(r.infra_failure());
    }

    #[test]
    fn model_errors_end_the_method() {
        let idx = index_project("p", [("m.py", SRC)]);
        let graph = build_call_graph(&idx);
        let model = FnModel(|_: &Conversation| Err(ChatError::CassetteMiss { digest: "abc".into() }));
        let exec = Scripted::new(vec![]);
        let assets = FewShotAssets::default();
        let cfg = PipelineConfig::default();
        let p = Pipeline { index: &idx, graph: &graph, model: &model, executor: &exec, assets: &assets, cfg: &cfg };
        let r = p.detect_method(&idx.resolve("helper").unwrap());
        assert_eq!(r.status, MethodStatus::Error);
        assert!(r.error.unwrap().contains("abc"));
    }
}
