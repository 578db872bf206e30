//! Runner result wire format, outcome classification and dispatch.

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Passed,
    Failed,
    Infra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    None,
    TypeError,
    OtherError,
    CollectionError,
    Timeout,
}

impl RunStatus {
    pub const ALL: [RunStatus; 3] = [RunStatus::Passed, RunStatus::Failed, RunStatus::Infra];
}

impl FailureKind {
    pub const ALL: [FailureKind; 5] =
        [FailureKind::None, FailureKind::TypeError, FailureKind::OtherError, FailureKind::CollectionError, FailureKind::Timeout];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub file: String,
    pub line: u32,
    pub function: String,
}

/// One line of runner output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub status: RunStatus,
    pub failure_kind: FailureKind,
    #[serde(default)]
    pub exception_class: String,
    #[serde(default)]
    pub message: String,
    /// Outermost first.
    #[serde(default)]
    pub frames: Vec<Frame>,
    #[serde(default)]
    pub duration_s: f64,
}

impl RunResult {
    pub fn passed(duration_s: f64) -> Self {
        RunResult {
            status: RunStatus::Passed,
            failure_kind: FailureKind::None,
            exception_class: String::new(),
            message: String::new(),
            frames: Vec::new(),
            duration_s,
        }
    }

    pub fn failed(kind: FailureKind, exception_class: &str, message: &str) -> Self {
        RunResult {
            status: RunStatus::Failed,
            failure_kind: kind,
            exception_class: exception_class.into(),
            message: message.into(),
            frames: Vec::new(),
            duration_s: 0.0,
        }
    }

    pub fn infra(message: impl Into<String>) -> Self {
        RunResult {
            status: RunStatus::Infra,
            failure_kind: FailureKind::None,
            exception_class: String::new(),
            message: message.into(),
            frames: Vec::new(),
            duration_s: 0.0,
        }
    }

    /// Status/kind consistency.
    pub fn check(&self) -> Result<(), RunLineError> {
        match (self.status, self.failure_kind) {
            (RunStatus::Passed, FailureKind::None) | (RunStatus::Infra, _) => Ok(()),
            (RunStatus::Passed, k) => Err(RunLineError::Inconsistent(format!("passed with failure_kind {k:?}"))),
            (RunStatus::Failed, FailureKind::None) => Err(RunLineError::Inconsistent("failed with failure_kind none".into())),
            (RunStatus::Failed, _) => Ok(()),
        }
    }

    /// Traceback rendered for prompts, outermost frame first.
    pub fn traceback(&self) -> String {
        let mut out = String::new();
        for f in &self.frames {
            out.push_str(&format!("  File \"{}\", line {}, in {}\n", f.file, f.line, f.function));
        }
        if !self.exception_class.is_empty() {
            out.push_str(&format!("{}: {}\n", self.exception_class, self.message));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunLineError {
    #[error("runner printed no result line")]
    Empty,
    #[error("runner printed {0} non-empty lines, expected exactly one")]
    TooManyLines(usize),
    #[error("result line is not valid JSON for the run-result schema: {0}")]
    Malformed(String),
    #[error("result line is inconsistent: {0}")]
    Inconsistent(String),
}

/// Parses runner stdout, which must contain exactly one non-blank line.
pub fn parse_run_line(stdout: &str) -> Result<RunResult, RunLineError> {
    let lines: Vec<&str> = stdout.lines().filter(|l| !l.trim().is_empty()).collect();
    let line = match lines.as_slice() {
        [] => return Err(RunLineError::Empty),
        [one] => *one,
        many => return Err(RunLineError::TooManyLines(many.len())),
    };
    let run: RunResult = serde_json::from_str(line.trim()).map_err(|e| RunLineError::Malformed(e.to_string()))?;
    run.check()?;
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Pass,
    TypeErrorTriggered,
    OtherFailure,
    Timeout,
    Infra,
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OutcomeKind::Pass => "pass",
            OutcomeKind::TypeErrorTriggered => "type_error",
            OutcomeKind::OtherFailure => "other_failure",
            OutcomeKind::Timeout => "timeout",
            OutcomeKind::Infra => "infra",
        };
        f.write_str(s)
    }
}

/// Maps a `(status, failure_kind)` pair. Inconsistent pairs are `Infra`.
pub fn classify(status: RunStatus, kind: FailureKind) -> OutcomeKind {
    match (status, kind) {
        (RunStatus::Passed, FailureKind::None) => OutcomeKind::Pass,
        (RunStatus::Failed, FailureKind::TypeError) => OutcomeKind::TypeErrorTriggered,
        (RunStatus::Failed, FailureKind::OtherError | FailureKind::CollectionError) => OutcomeKind::OtherFailure,
        (RunStatus::Failed, FailureKind::Timeout) => OutcomeKind::Timeout,
        _ => OutcomeKind::Infra,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub kind: OutcomeKind,
    pub run: RunResult,
}

impl TestOutcome {
    pub fn from_run(run: RunResult) -> Self {
        TestOutcome { kind: classify(run.status, run.failure_kind), run }
    }

    pub fn infra(message: impl Into<String>) -> Self {
        Self::from_run(RunResult::infra(message))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NextAction {
    RecordNegative,
    Reflect,
    SelfDebug,
    Discard,
    RecordDiagnostic,
}

/// What the pipeline does after executing a test of the given iteration.
pub fn dispatch(kind: OutcomeKind, iteration: u32) -> NextAction {
    match kind {
        OutcomeKind::Pass => NextAction::RecordNegative,
        OutcomeKind::TypeErrorTriggered => NextAction::Reflect,
        OutcomeKind::OtherFailure if iteration == 0 => NextAction::SelfDebug,
        OutcomeKind::OtherFailure => NextAction::Discard,
        OutcomeKind::Timeout | OutcomeKind::Infra => NextAction::RecordDiagnostic,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_single_line() {
        let line = r#"{"status":"failed","failure_kind":"type_error","exception_class":"TypeError","message":"bad","frames":[{"file":"t.py","line":3,"function":"test_x"}],"duration_s":0.1}"#;
        let run = parse_run_line(&format!("\n{line}\n")).unwrap();
        assert_eq!(TestOutcome::from_run(run.clone()).kind, OutcomeKind::TypeErrorTriggered);
        assert!(run.traceback().contains("line 3, in test_x"));
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_run_line(""), Err(RunLineError::Empty));
        assert!(matches!(parse_run_line("garbage"), Err(RunLineError::Malformed(_))));
        assert!(matches!(parse_run_line("{}\n{}"), Err(RunLineError::TooManyLines(2))));
        let bad = r#"{"status":"passed","failure_kind":"type_error"}"#;
        assert!(matches!(parse_run_line(bad), Err(RunLineError::Inconsistent(_))));
    }

    #[test]
    fn dispatch_table() {
        assert_eq!(dispatch(OutcomeKind::OtherFailure, 0), NextAction::SelfDebug);
        assert_eq!(dispatch(OutcomeKind::OtherFailure, 1), NextAction::Discard);
        assert_eq!(dispatch(OutcomeKind::OtherFailure, 2), NextAction::Discard);
        for i in 0..3 {
            assert_eq!(dispatch(OutcomeKind::Pass, i), NextAction::RecordNegative);
            assert_eq!(dispatch(OutcomeKind::TypeErrorTriggered, i), NextAction::Reflect);
            assert_eq!(dispatch(OutcomeKind::Timeout, i), NextAction::RecordDiagnostic);
            assert_eq!(dispatch(OutcomeKind::Infra, i), NextAction::RecordDiagnostic);
        }
    }
}
