//! System prompts and user-message templates for every agent.
//!
//! Each system prompt opens with a fixed sentence naming the agent, which
//! [`Agent::identify`] uses to tell conversations apart (scripted models in
//! tests rely on it).

use crate::constraint::Mode;
use crate::llm::Conversation;
use crate::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Agent {
    TriggerConstraint,
    NormalConstraint,
    Propagation,
    Risk,
    TestGeneration,
    TypeConsistency,
    SemanticValidity,
    Arbiter,
}

impl Agent {
    pub const ALL: [Agent; 8] = [
        Agent::TriggerConstraint,
        Agent::NormalConstraint,
        Agent::Propagation,
        Agent::Risk,
        Agent::TestGeneration,
        Agent::TypeConsistency,
        Agent::SemanticValidity,
        Agent::Arbiter,
    ];

    /// The opening sentence of the agent's system prompt.
    pub fn marker(self) -> &'static str {
        match self {
            Agent::TriggerConstraint => "You are the error-seeking constraint agent.",
            Agent::NormalConstraint => "You are the valid-usage constraint agent.",
            Agent::Propagation => "You are the constraint propagation agent.",
            Agent::Risk => "You are the constraint evaluation agent.",
            Agent::TestGeneration => "You are the unit test generation agent.",
            Agent::TypeConsistency => "You are the type consistency agent.",
            Agent::SemanticValidity => "You are the semantic validity agent.",
            Agent::Arbiter => "You are the meta-evaluation agent.",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Agent::TriggerConstraint => "trigger_constraint",
            Agent::NormalConstraint => "normal_constraint",
            Agent::Propagation => "propagation",
            Agent::Risk => "risk",
            Agent::TestGeneration => "test_generation",
            Agent::TypeConsistency => "type_consistency",
            Agent::SemanticValidity => "semantic_validity",
            Agent::Arbiter => "arbiter",
        }
    }

    pub fn identify(conv: &Conversation) -> Option<Agent> {
        let system = conv.system()?;
        Agent::ALL.into_iter().find(|a| system.starts_with(a.marker()))
    }

    pub fn for_focal(mode: Mode) -> Agent {
        match mode {
            Mode::Trigger => Agent::TriggerConstraint,
            Mode::Normal => Agent::NormalConstraint,
        }
    }
}

pub const CONSTRAINT_SCHEMA: &str = r#"Constraint format: a JSON object mapping each constrained parameter name to a constraint.
A constraint is an object with these keys:
  "kind": "primitive" or "object" (required)
  "type_name": a type or class name such as "int", "str", "datetime" (optional)
  "fields": object mapping attribute, key or element names to nested constraints, for containers and composite objects (optional, object kind only)
  "custom_methods": list of ordinary method names the value must provide (optional, object kind only)
  "magic_methods": list of magic method names the value must support, e.g. "__getitem__", "__iter__", "__bool__" (optional)
Do not constrain the receiver (self or cls). Parameters you cannot say anything about may be omitted.
Example:
```json
{"key": {"kind": "object", "type_name": "list", "magic_methods": ["__iter__", "__len__"], "fields": {"element": {"kind": "object", "magic_methods": ["__index__"]}}}}
```"#;

fn focal_system(mode: Mode) -> String {
    let goal = match mode {
        Mode::Trigger => {
            "Given the source of a Python function, infer constraints on its parameters that are likely to expose a type error inside it: values that are accepted by the function's checks but reach an operation that does not support them."
        }
        Mode::Normal => {
            "Given the source of a Python function, infer constraints on its parameters under which the function executes successfully, following its intended usage."
        }
    };
    format!(
        "{}\n{goal}\nExplain your reasoning briefly, then give the constraints in one fenced json block.\n\n{CONSTRAINT_SCHEMA}",
        Agent::for_focal(mode).marker()
    )
}

pub fn system_prompt(agent: Agent) -> String {
    match agent {
        Agent::TriggerConstraint => focal_system(Mode::Trigger),
        Agent::NormalConstraint => focal_system(Mode::Normal),
        Agent::Propagation => format!(
            "{}\nYou propagate parameter constraints backward along a call chain. You receive a callee, the constraints on the callee's parameters, and the source of a caller that invokes it. Infer the constraints the caller's own parameters must satisfy so that the call reaches the callee with arguments meeting the callee's constraints. Keep the requested mode: error-seeking constraints stay error-seeking, valid-usage constraints stay valid-usage.\nExplain briefly, then give the caller's constraints in one fenced json block.\n\n{CONSTRAINT_SCHEMA}",
            agent.marker()
        ),
        Agent::Risk => format!(
            "{}\nYou judge whether a sequence of error-seeking constraints is feasible: could a realistic caller of the entry method supply inputs that satisfy every constraint along the chain and reach the focal method? Say which part of the chain contributes most to the risk.\nAnswer with a JSON object {{\"risk\": \"high\" | \"low\", \"justification\": \"...\"}}.",
            agent.marker()
        ),
        Agent::TestGeneration => format!(
            "{}\nYou write Python unit tests that exercise a focal method through the entry method of its call chain. The conversation so far holds the constraint analysis of the chain. Use only names that exist in the project, construct objects the way the project does, and do not write assertions. Answer with one fenced python block when asked for code.",
            agent.marker()
        ),
        Agent::TypeConsistency => format!(
            "{}\nA generated test raised a TypeError. Decide whether the inputs the test passed along the chain satisfy the inferred type constraints. A test whose inputs violate the constraints exposes the test's own mistake, not a bug.\n{VERDICT_FORMAT}",
            agent.marker()
        ),
        Agent::SemanticValidity => format!(
            "{}\nA generated test raised a TypeError. Decide whether the test reflects a realistic use of the code: it calls the public entry method with inputs a real user could pass, and it does not rely on objects, attributes or behavior the test invented.\n{VERDICT_FORMAT}",
            agent.marker()
        ),
        Agent::Arbiter => format!(
            "{}\nTwo reviewers judged whether a TypeError raised by a generated test is a real bug (true_positive) or an artifact of the test (false_positive). Weigh their verdicts by confidence, high over medium over low, and check them against the constraints and chain. When the result is false_positive, give concrete suggestions for rewriting the test.\nAnswer with a JSON object {{\"decision\": \"true_positive\" | \"false_positive\", \"explanation\": \"...\", \"suggestions\": \"...\"}}.",
            agent.marker()
        ),
    }
}

pub const VERDICT_FORMAT: &str = "Answer with a JSON object {\"decision\": \"true_positive\" | \"false_positive\", \"confidence\": \"high\" | \"medium\" | \"low\", \"rationale\": \"...\", \"suggestions\": \"...\"}. Suggestions are required for false_positive and say how to change the test.";

pub fn malformed_reprompt(error: &str) -> String {
    format!("Your answer could not be used: {error}\nReply again with only the requested fenced json block.")
}

pub fn no_code_reprompt() -> String {
    "Your answer did not contain a fenced python code block. Reply with the complete test file in one ```python block.".into()
}

pub fn focal_user(qualified_name: &str, module_path: &str, source: &str) -> String {
    format!("Focal method `{qualified_name}` from `{module_path}`:\n```python\n{source}\n```")
}

pub fn propagation_user(
    mode: Mode,
    callee: &str,
    callee_constraint: &str,
    caller: &str,
    caller_path: &str,
    caller_source: &str,
) -> String {
    let kind = match mode {
        Mode::Trigger => "error-seeking",
        Mode::Normal => "valid-usage",
    };
    format!(
        "Callee `{callee}` has these {kind} constraints:\n```json\n{callee_constraint}\n```\nCaller `{caller}` from `{caller_path}`:\n```python\n{caller_source}\n```\nInfer the {kind} constraints on the parameters of `{caller}`."
    )
}

pub fn risk_user(chain: &str, constraints: &str, steps: &str) -> String {
    format!("Call chain (entry first): {chain}\n\nError-seeking constraints, focal method first:\n{constraints}\n\nPropagation steps:\n{steps}")
}

pub fn context_user(entry: &str, context: &str) -> String {
    format!("Source context from the file that defines the entry method `{entry}`:\n```python\n{context}\n```")
}

pub fn summarize_user(entry: &str, source: &str) -> String {
    format!("Summarize the functionality of the entry method `{entry}` in a few sentences:\n```python\n{source}\n```")
}

pub fn generate_user(entry: &str, focal: &str, mode: Mode, import_hint: &str) -> String {
    let aim = match mode {
        Mode::Trigger => {
            "Write a unit test that calls the entry method with inputs satisfying the error-seeking constraints of the chain, so that the call reaches the focal method and exposes the suspected type error."
        }
        Mode::Normal => {
            "Write a unit test that calls the entry method with inputs satisfying the valid-usage constraints of the chain, exercising the focal method the way real callers do."
        }
    };
    format!(
        "{aim}\nEntry method: `{entry}`. Focal method: `{focal}`.\n{import_hint}\nDo not write assertions. Return the complete test file in one ```python block."
    )
}

pub fn self_debug_user(exception: &str, message: &str, traceback: &str) -> String {
    format!(
        "The test failed without raising a TypeError.\nException: {exception}: {message}\nTraceback (outermost first):\n{traceback}\nRevise the test so it runs up to the call of the entry method. Return the complete test file in one ```python block."
    )
}

pub fn refine_user(suggestions: &str) -> String {
    format!(
        "Reviewers judged the TypeError raised by the previous test to be an artifact of the test, not a bug in the project. Their suggestions:\n{suggestions}\nWrite a new test that follows these suggestions. Return the complete test file in one ```python block."
    )
}
