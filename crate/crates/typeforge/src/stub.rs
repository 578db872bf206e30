//! Rule-driven stand-in for the runner, used by tests and fixtures.
//!
//! Rules live in `<cwd>/.typeforge-stub.json`. The first rule whose
//! `contains` substring occurs in the test source decides the output;
//! without a match the test passes.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use typeforge_core::outcome::RunResult;

pub const RULES_FILE: &str = ".typeforge-stub.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubRules {
    #[serde(default)]
    pub rules: Vec<StubRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubRule {
    pub contains: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<RunResult>,
    /// Printed verbatim instead of a result line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_stdout: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sleep_s: Option<f64>,
}

impl StubRule {
    pub fn result(contains: &str, result: RunResult) -> Self {
        StubRule { contains: contains.into(), result: Some(result), raw_stdout: None, exit_code: None, sleep_s: None }
    }
}

impl StubRules {
    pub fn load(cwd: &Path) -> anyhow::Result<Self> {
        let path = cwd.join(RULES_FILE);
        if !path.exists() {
            return Ok(StubRules::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(&path)?)?)
    }

    pub fn save(&self, cwd: &Path) -> anyhow::Result<()> {
        std::fs::write(cwd.join(RULES_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn matching(&self, source: &str) -> Option<&StubRule> {
        self.rules.iter().find(|r| source.contains(&r.contains))
    }
}

/// What the stub prints and its exit code.
pub fn respond(rules: &StubRules, source: &str) -> (String, i32) {
    let Some(rule) = rules.matching(source) else {
        return (serde_json::to_string(&RunResult::passed(0.0)).expect("serializes"), 0);
    };
    if let Some(s) = rule.sleep_s {
        std::thread::sleep(Duration::from_secs_f64(s));
    }
    let out = match (&rule.raw_stdout, &rule.result) {
        (Some(raw), _) => raw.clone(),
        (None, Some(r)) => serde_json::to_string(r).expect("serializes"),
        (None, None) => serde_json::to_string(&RunResult::passed(0.0)).expect("serializes"),
    };
    (out, rule.exit_code.unwrap_or(0))
}
