//! Shared fixtures: the indexing project with buggy and fixed snapshots,
//! hand-written model answers, and helpers that turn them into cassettes.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use typeforge::commands::{self, DetectRun, Services};
use typeforge::config::{FileConfig, RunConfig};
use typeforge::gateway::{load_cassette, Recorder};
use typeforge_core::llm::{ChatError, Conversation, FnModel, ModelConfig, Replay};
use typeforge_core::prompts::Agent;

pub const FOCAL: &str = "indexing.py::_LocationIndexer._validate_key";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn buggy() -> PathBuf {
    fixtures().join("motivating/buggy")
}

pub fn fixed() -> PathBuf {
    fixtures().join("motivating/fixed")
}

/// Rejects non-integer keys with a deliberate TypeError, so the datetime
/// test still fails there.
pub fn partial() -> PathBuf {
    fixtures().join("motivating/partial")
}

pub fn committed_cassette() -> PathBuf {
    fixtures().join("motivating/cassette.json")
}

pub fn stub_runner() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_typeforge-stub-runner"))
}

pub fn typeforge_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_typeforge"))
}

/// Calls the focal method directly with a NaN array; `_has_valid_item`
/// would never let this value through.
pub const TEST_NAN: &str = r#"import numpy as np

from frame import Frame
from indexing import _LocationIndexer


def test_validate_key_nan():
    indexer = _LocationIndexer(Frame({"a": [1, 2, 3]}))
    indexer._validate_key(np.array([np.nan]), 0)
"#;

/// Subscripts an invented indexer class that has no `__getitem__`.
pub const TEST_HALLUCINATED: &str = r#"from frame import Frame


class TestLocationIndexer:
    def __init__(self, obj):
        self.obj = obj


def test_validate_key_rejects_text():
    indexer = TestLocationIndexer(Frame({"a": [1, 2, 3]}))
    indexer["x"]
"#;

/// Reaches the focal method through the public `iloc` accessor.
pub const TEST_DATETIME: &str = r#"from datetime import datetime

from frame import Frame


def test_iloc_datetime_key():
    frame = Frame({"a": [1, 2, 3]})
    frame.iloc[datetime(2020, 1, 1), 0]
"#;

pub const TEST_SMOKE: &str = r#"from frame import Frame


def test_frame_roundtrip():
    frame = Frame({"a": [1, 2, 3]})
    frame.iloc[1, 0]
"#;

/// Which test the model writes first for the focal method, and which one
/// after reviewers reject it.
#[derive(Debug, Clone, Copy)]
pub struct Scenario {
    pub first: &'static str,
    pub refined: &'static str,
}

/// The default story: a hallucinated test, then the datetime test.
pub const MOTIVATING: Scenario = Scenario { first: TEST_HALLUCINATED, refined: TEST_DATETIME };

fn fenced(lang: &str, body: &str) -> String {
    format!("```{lang}\n{body}\n```")
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let rest = &text[text.find(start)? + start.len()..];
    Some(&rest[..rest.find(end)?])
}

fn datetime_key() -> Value {
    json!({"kind": "object", "type_name": "datetime", "magic_methods": ["__ge__", "__lt__"]})
}

fn int_key() -> Value {
    json!({"kind": "primitive", "type_name": "int"})
}

fn tuple_of(element: Value) -> Value {
    json!({"kind": "object", "type_name": "tuple", "magic_methods": ["__iter__"], "fields": {"element": element}})
}

fn focal_constraint(focal: &str, trigger: bool) -> Value {
    if !focal.ends_with("_LocationIndexer._validate_key") {
        return json!({});
    }
    let key = if trigger { datetime_key() } else { int_key() };
    json!({"key": key, "axis": int_key()})
}

fn propagated(caller: &str, callee_constraint: &str, trigger: bool) -> Value {
    if callee_constraint.trim() == "{}" {
        return json!({});
    }
    let element = if trigger { datetime_key() } else { int_key() };
    match caller {
        "_LocationIndexer._has_valid_item" | "_LocationIndexer._getitem_tuple" => json!({"tup": tuple_of(element)}),
        "_LocationIndexer.__getitem__" => json!({"key": tuple_of(element)}),
        _ => json!({}),
    }
}

fn verdict(decision: &str, confidence: &str, rationale: &str, suggestions: &str) -> String {
    json!({"decision": decision, "confidence": confidence, "rationale": rationale, "suggestions": suggestions})
        .to_string()
}

const NAN_TYPE: &str = "The focal method is called directly with a NaN array. _has_valid_item only admits keys that support comparison, so the constraint on key is violated.";
const NAN_SEM: &str = "Real callers reach _validate_key through iloc, never with a NumPy NaN array.";
const FIX_NAN: &str = "Call Frame.iloc[...] with a key that passes _has_valid_item instead of calling _validate_key directly.";
const HALLU_TYPE: &str = "The key 'x' is a str, which satisfies the comparison constraints.";
const HALLU_SEM: &str = "TestLocationIndexer is defined by the test and has no __getitem__; the TypeError comes from subscripting it.";
const FIX_HALLU: &str = "Use the project's own indexer through Frame.iloc and pass a datetime key so the comparison in _validate_key is reached.";

/// Message of the deliberate rejection in the partially fixed snapshot.
const REJECTED: &str = "cannot index with a datetime key";
const REJECT_WHY: &str = "_has_valid_item raises this TypeError on purpose to reject a non-integer key; that is the intended behavior.";

/// Answers a request the way the model did when the cassette was made.
pub fn answer(conv: &Conversation, scenario: Scenario) -> String {
    let last = conv.last_user().unwrap_or("");
    match Agent::identify(conv) {
        Some(agent @ (Agent::TriggerConstraint | Agent::NormalConstraint)) => {
            let focal = between(last, "Focal method `", "`").unwrap_or("");
            let c = focal_constraint(focal, agent == Agent::TriggerConstraint);
            format!("Constraints for `{focal}`.\n{}", fenced("json", &c.to_string()))
        }
        Some(Agent::Propagation) => {
            let caller = between(last, "Caller `", "`").unwrap_or("");
            let callee = between(last, "constraints:\n```json\n", "\n```").unwrap_or("{}");
            let c = propagated(caller, callee, last.contains("error-seeking constraints:"));
            format!("Propagated to `{caller}`.\n{}", fenced("json", &c.to_string()))
        }
        Some(Agent::Risk) => {
            let chain = last.lines().next().unwrap_or("");
            if chain.trim_end().ends_with("_LocationIndexer._validate_key") {
                json!({"risk": "high", "justification": "a datetime key passes _has_valid_item and reaches the comparison with len_axis"}).to_string()
            } else {
                json!({"risk": "low", "justification": "no constraint leads to an unsupported operation"}).to_string()
            }
        }
        Some(Agent::TestGeneration) => {
            if last.starts_with("Summarize") {
                "Returns the rows and columns selected by integer position.".into()
            } else if last.starts_with("Reviewers judged") {
                fenced("python", scenario.refined)
            } else if last.contains("Focal method: `_LocationIndexer._validate_key`") {
                fenced("python", scenario.first)
            } else {
                fenced("python", TEST_SMOKE)
            }
        }
        Some(Agent::TypeConsistency | Agent::SemanticValidity) if last.contains(REJECTED) => {
            verdict("false_positive", "high", REJECT_WHY, "Pass an integer key; the indexer rejects other keys on purpose.")
        }
        Some(Agent::TypeConsistency) => {
            if last.contains("TestLocationIndexer(") {
                verdict("true_positive", "medium", HALLU_TYPE, "")
            } else if last.contains("np.nan") {
                verdict("false_positive", "high", NAN_TYPE, FIX_NAN)
            } else {
                verdict("true_positive", "high", "A datetime key satisfies every constraint on the chain.", "")
            }
        }
        Some(Agent::SemanticValidity) => {
            if last.contains("TestLocationIndexer(") {
                verdict("false_positive", "high", HALLU_SEM, FIX_HALLU)
            } else if last.contains("np.nan") {
                verdict("false_positive", "high", NAN_SEM, FIX_NAN)
            } else {
                verdict("true_positive", "high", "Indexing a frame through iloc with a datetime is ordinary use.", "")
            }
        }
        Some(Agent::Arbiter) => json!({
            "decision": "false_positive",
            "explanation": "The TypeError comes from the invented TestLocationIndexer, not from the project.",
            "suggestions": FIX_HALLU,
        })
        .to_string(),
        None => String::new(),
    }
}

/// Run configuration for a snapshot with the stub runner and a fixed model.
pub fn run_config(project: &Path, out: &Path) -> RunConfig {
    let file = FileConfig {
        project: Some(project.to_path_buf()),
        out: Some(out.to_path_buf()),
        runner: Some(stub_runner()),
        workers: Some(2),
        timeout: Some(10),
        ..Default::default()
    };
    let mut cfg = RunConfig::resolve(file).expect("valid config");
    cfg.pipeline.model = ModelConfig::default();
    cfg
}

/// Records a cassette by running `detect` over every function of each
/// snapshot with the scripted model.
pub fn record(cassette: &Path, scenario: Scenario, snapshots: &[PathBuf], scratch: &Path) {
    for (n, snap) in snapshots.iter().enumerate() {
        let cfg = run_config(snap, &scratch.join(format!("record-{n}")));
        let model = FnModel(move |c: &Conversation| Ok::<_, ChatError>(answer(c, scenario)));
        let recorder = Recorder::open(model, cassette, &cfg.pipeline.model.model_id).expect("recorder");
        let services = Services::with_model(&cfg, Box::new(recorder));
        commands::detect(&cfg, &services, &[]).expect("recording run");
    }
}

/// `detect` over the whole snapshot, answering from `cassette` only.
pub fn replay_detect(cassette: &Path, project: &Path, out: &Path, focals: &[String]) -> DetectRun {
    let cfg = run_config(project, out);
    let services = Services::with_model(&cfg, Box::new(Replay::new(load_cassette(cassette).expect("cassette"))));
    commands::detect(&cfg, &services, focals).expect("replay run")
}
