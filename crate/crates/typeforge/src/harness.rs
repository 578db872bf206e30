//! Runs generated tests through a runner executable and archives each run.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use typeforge_core::outcome::{parse_run_line, FailureKind, RunResult, TestOutcome};
use typeforge_core::pipeline::Executor;
use typeforge_core::testgen::{GeneratedTest, TEST_FILE_NAME};

/// Extra wall-clock time the runner gets beyond the test timeout before it
/// is killed.
pub const GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct Harness {
    pub runner: PathBuf,
    pub timeout_s: u64,
    pub framework: String,
}

/// Bytes a runner produced, kept for archival.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRun {
    pub stdout: String,
    pub stderr: String,
    pub exit_code: Option<i32>,
    pub killed: bool,
}

impl Harness {
    pub fn new(runner: impl Into<PathBuf>, timeout_s: u64) -> Self {
        Harness { runner: runner.into(), timeout_s, framework: "auto".into() }
    }

    /// Invokes `runner --test <path> --cwd <dir> --timeout <s> --framework <f>`.
    pub fn run(&self, test_path: &Path, cwd: &Path) -> (TestOutcome, RawRun) {
        let mut child = match Command::new(&self.runner)
            .arg("--test")
            .arg(test_path)
            .arg("--cwd")
            .arg(cwd)
            .arg("--timeout")
            .arg(self.timeout_s.to_string())
            .arg("--framework")
            .arg(&self.framework)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
        {
            Ok(c) => c,
            Err(e) => {
                let msg = format!("cannot start runner {}: {e}", self.runner.display());
                return (TestOutcome::infra(msg.clone()), RawRun { stderr: msg, ..Default::default() });
            }
        };
        let stdout = child.stdout.take().map(drain);
        let stderr = child.stderr.take().map(drain);
        let deadline = Instant::now() + Duration::from_secs(self.timeout_s) + GRACE;
        let mut killed = false;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    killed = true;
                    break child.wait().ok();
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                Err(_) => break None,
            }
        };
        let raw = RawRun {
            stdout: stdout.and_then(|h| h.join().ok()).unwrap_or_default(),
            stderr: stderr.and_then(|h| h.join().ok()).unwrap_or_default(),
            exit_code: status.and_then(|s| s.code()),
            killed,
        };
        (classify_raw(&raw, self.timeout_s), raw)
    }
}

fn drain<R: Read + Send + 'static>(mut r: R) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Killed runners count as a test timeout; a non-zero exit or unusable
/// stdout is an infrastructure failure.
pub fn classify_raw(raw: &RawRun, timeout_s: u64) -> TestOutcome {
    if raw.killed {
        let mut run = RunResult::failed(FailureKind::Timeout, "", &format!("runner killed after {timeout_s}s plus grace"));
        run.duration_s = (timeout_s + GRACE.as_secs()) as f64;
        return TestOutcome::from_run(run);
    }
    match raw.exit_code {
        Some(0) => {}
        code => {
            return TestOutcome::infra(format!(
                "runner exited with {}: {}",
                code.map_or("a signal".to_string(), |c| format!("status {c}")),
                raw.stderr.trim()
            ))
        }
    }
    match parse_run_line(&raw.stdout) {
        Ok(run) => TestOutcome::from_run(run),
        Err(e) => TestOutcome::infra(format!("{e}; stdout was {:?}", truncate(&raw.stdout, 400))),
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Test source, result and raw streams of one execution.
pub fn archive(dir: &Path, source: &str, outcome: &TestOutcome, raw: &RawRun) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(TEST_FILE_NAME), source)?;
    let mut run = serde_json::to_string_pretty(outcome)?;
    run.push('\n');
    std::fs::write(dir.join("run.json"), run)?;
    std::fs::write(dir.join("stdout.txt"), &raw.stdout)?;
    std::fs::write(dir.join("stderr.txt"), &raw.stderr)?;
    Ok(())
}

/// Executes one focal method's tests, archiving attempt `n` under
/// `<method_dir>/attempts/<n>/`.
pub struct MethodExecutor<'a> {
    pub harness: &'a Harness,
    pub project_root: &'a Path,
    pub method_dir: PathBuf,
}

impl Executor for MethodExecutor<'_> {
    fn execute(&self, test: &GeneratedTest, attempt: usize) -> TestOutcome {
        let dir = self.method_dir.join("attempts").join(attempt.to_string());
        let path = dir.join(TEST_FILE_NAME);
        if let Err(e) = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(&path, &test.source)) {
            return TestOutcome::infra(format!("cannot write {}: {e}", path.display()));
        }
        let (outcome, raw) = self.harness.run(&path, self.project_root);
        if let Err(e) = archive(&dir, &test.source, &outcome, &raw) {
            return TestOutcome::infra(format!("cannot archive {}: {e:#}", dir.display()));
        }
        outcome
    }
}
