//! Non-fatal findings collected while running the pipeline.

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Pipeline stage or module that produced the finding, e.g. `constraint`.
    pub stage: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(severity: Severity, stage: &str, message: impl Into<String>) -> Self {
        Diagnostic { severity, stage: stage.to_string(), message: message.into() }
    }

    pub fn info(stage: &str, message: impl Into<String>) -> Self {
        Self::new(Severity::Info, stage, message)
    }

    pub fn warning(stage: &str, message: impl Into<String>) -> Self {
        Self::new(Severity::Warning, stage, message)
    }

    pub fn error(stage: &str, message: impl Into<String>) -> Self {
        Self::new(Severity::Error, stage, message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{level}[{}]: {}", self.stage, self.message)
    }
}
