//! Constraint analysis: focal agents, backward propagation and risk.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::constraint::{parse_for_signature, ChainConstraints, MethodConstraint, Mode};
use crate::diag::Diagnostic;
use crate::llm::{ChatError, ChatModel, Conversation, ModelConfig};
use crate::prelude::*;
use crate::project::{FunctionRef, InvocationChain, SourceIndex};
use crate::prompts::{self, Agent};
use crate::text::extract_json_object;
use crate::SCHEMA_VERSION;

const STAGE: &str = "analysis";

/// One exchange with a constraint agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocalRecord {
    pub function: FunctionRef,
    pub constraint: MethodConstraint,
    /// Conversation as sent for the accepted answer.
    pub prompt: Conversation,
    pub response: String,
}

/// `⟨F_i, P_i, F_{i-1}⟩ ⇒ P_{i-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisStepRecord {
    pub callee: FunctionRef,
    pub callee_constraint: MethodConstraint,
    pub caller: FunctionRef,
    pub caller_constraint: MethodConstraint,
    pub prompt: Conversation,
    pub response: String,
}

impl AnalysisStepRecord {
    pub fn mode(&self) -> Mode {
        self.caller_constraint.mode
    }
}

/// First user message of an exchange, i.e. the substantive request without
/// any re-prompt.
pub fn request_text(prompt: &Conversation) -> &str {
    prompt
        .turns()
        .iter()
        .find(|t| t.role == crate::llm::Role::User)
        .map(|t| t.content.as_str())
        .unwrap_or("")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub level: RiskLevel,
    pub justification: String,
}

/// Re-prompts shared by all agent calls of one chain.
#[derive(Debug, Clone, Copy)]
pub struct RetryBudget {
    remaining: usize,
}

impl RetryBudget {
    pub fn new(n: usize) -> Self {
        RetryBudget { remaining: n }
    }

    fn take(&mut self) -> bool {
        if self.remaining == 0 {
            return false;
        }
        self.remaining -= 1;
        true
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }
}

/// Model handle plus call accounting for one chain.
pub struct Session<'a> {
    pub model: &'a dyn ChatModel,
    pub cfg: &'a ModelConfig,
    pub calls: usize,
}

impl<'a> Session<'a> {
    pub fn new(model: &'a dyn ChatModel, cfg: &'a ModelConfig) -> Self {
        Session { model, cfg, calls: 0 }
    }

    pub fn ask(&mut self, conv: &Conversation) -> Result<String, ChatError> {
        self.calls += 1;
        Ok(self.model.complete(conv, self.cfg)?.text)
    }
}

/// Asks for a constraint, re-prompting at most once and only while the
/// chain's retry budget lasts. The inner `Err` carries the last parse
/// failure.
fn ask_constraint(
    session: &mut Session<'_>,
    mut conv: Conversation,
    index: &SourceIndex,
    target: &FunctionRef,
    mode: Mode,
    budget: &mut RetryBudget,
) -> Result<Result<(MethodConstraint, Conversation, String), String>, ChatError> {
    let def = match index.def(target) {
        Some(d) => d,
        None => return Ok(Err(format!("{target} is not in the index"))),
    };
    let mut retried = false;
    loop {
        let response = session.ask(&conv)?;
        match parse_for_signature(&response, target, mode, def) {
            Ok(parsed) => return Ok(Ok((parsed.constraint, conv, response))),
            Err(e) => {
                let msg = e.to_string();
                if retried || !budget.take() {
                    return Ok(Err(msg));
                }
                conv.assistant(if response.trim().is_empty() { "(empty response)" } else { response.as_str() });
                conv.user(prompts::malformed_reprompt(&msg));
                retried = true;
            }
        }
    }
}

pub fn infer_focal_constraints(
    session: &mut Session<'_>,
    index: &SourceIndex,
    focal: &FunctionRef,
    mode: Mode,
    budget: &mut RetryBudget,
) -> Result<Result<FocalRecord, String>, ChatError> {
    let source = match index.source_of(focal) {
        Some(s) => s,
        None => return Ok(Err(format!("no source for {focal}"))),
    };
    let mut conv = Conversation::with_system(prompts::system_prompt(Agent::for_focal(mode)));
    conv.user(prompts::focal_user(&focal.qualified_name, &focal.module_path, source));
    Ok(ask_constraint(session, conv, index, focal, mode, budget)?.map(|(constraint, prompt, response)| FocalRecord {
        function: focal.clone(),
        constraint,
        prompt,
        response,
    }))
}

pub fn propagate_step(
    session: &mut Session<'_>,
    index: &SourceIndex,
    callee_constraint: &MethodConstraint,
    caller: &FunctionRef,
    budget: &mut RetryBudget,
) -> Result<Result<AnalysisStepRecord, String>, ChatError> {
    let source = match index.source_of(caller) {
        Some(s) => s,
        None => return Ok(Err(format!("no source for {caller}"))),
    };
    let mode = callee_constraint.mode;
    let mut conv = Conversation::with_system(prompts::system_prompt(Agent::Propagation));
    conv.user(prompts::propagation_user(
        mode,
        &callee_constraint.function.qualified_name,
        &callee_constraint.params_json(),
        &caller.qualified_name,
        &caller.module_path,
        source,
    ));
    Ok(ask_constraint(session, conv, index, caller, mode, budget)?.map(|(caller_constraint, prompt, response)| {
        AnalysisStepRecord {
            callee: callee_constraint.function.clone(),
            callee_constraint: callee_constraint.clone(),
            caller: caller.clone(),
            caller_constraint,
            prompt,
            response,
        }
    }))
}

/// Result of both backward passes over one chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainAnalysis {
    pub constraints: ChainConstraints,
    pub focal_records: Vec<FocalRecord>,
    /// Trigger-pass steps then normal-pass steps, each in F_n → F_1 order.
    pub steps: Vec<AnalysisStepRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ChainAnalysis {
    pub fn steps_for(&self, mode: Mode) -> Vec<&AnalysisStepRecord> {
        self.steps.iter().filter(|s| s.mode() == mode).collect()
    }

    pub fn focal_record(&self, mode: Mode) -> Option<&FocalRecord> {
        self.focal_records.iter().find(|r| r.constraint.mode == mode)
    }
}

/// Runs the trigger and normal passes. Parse failures empty the affected
/// sequence and leave a diagnostic; transport errors abort.
pub fn analyze_chain(
    session: &mut Session<'_>,
    index: &SourceIndex,
    chain: &InvocationChain,
) -> Result<ChainAnalysis, ChatError> {
    let mut budget = RetryBudget::new(chain.len());
    let mut out = ChainAnalysis {
        constraints: ChainConstraints { chain: chain.clone(), trigger_seq: Vec::new(), normal_seq: Vec::new() },
        focal_records: Vec::new(),
        steps: Vec::new(),
        diagnostics: Vec::new(),
    };
    for mode in [Mode::Trigger, Mode::Normal] {
        let seq = run_pass(session, index, chain, mode, &mut budget, &mut out)?;
        match mode {
            Mode::Trigger => out.constraints.trigger_seq = seq,
            Mode::Normal => out.constraints.normal_seq = seq,
        }
    }
    if let Err(e) = out.constraints.check_alignment() {
        panic!("constraint sequences misaligned: {e}");
    }
    Ok(out)
}

fn run_pass(
    session: &mut Session<'_>,
    index: &SourceIndex,
    chain: &InvocationChain,
    mode: Mode,
    budget: &mut RetryBudget,
    out: &mut ChainAnalysis,
) -> Result<Vec<MethodConstraint>, ChatError> {
    let focal = match infer_focal_constraints(session, index, chain.focal(), mode, budget)? {
        Ok(r) => r,
        Err(e) => {
            out.diagnostics.push(Diagnostic::warning(STAGE, format!("{mode} focal constraints failed: {e}")));
            return Ok(Vec::new());
        }
    };
    let mut seq = vec![focal.constraint.clone()];
    out.focal_records.push(focal);
    for k in (1..chain.len()).rev() {
        let caller = &chain.steps[k - 1];
        let callee_constraint = seq.last().expect("seeded").clone();
        match propagate_step(session, index, &callee_constraint, caller, budget)? {
            Ok(rec) => {
                seq.push(rec.caller_constraint.clone());
                out.steps.push(rec);
            }
            Err(e) => {
                out.diagnostics.push(Diagnostic::warning(
                    STAGE,
                    format!("{mode} propagation to {} failed: {e}", caller.qualified_name),
                ));
                return Ok(Vec::new());
            }
        }
    }
    Ok(seq)
}

/// Parses `{"risk": "high"|"low", "justification": ...}`; anything else is
/// low with a diagnostic.
pub fn parse_risk(text: &str) -> (RiskAssessment, Option<Diagnostic>) {
    let mut level = None;
    let mut justification = String::new();
    if let Some((json, prose)) = extract_json_object(text) {
        if let Ok(Value::Object(o)) = serde_json::from_str::<Value>(json) {
            let raw = o.get("risk").or_else(|| o.get("level")).and_then(Value::as_str).unwrap_or("");
            level = match raw.trim().to_ascii_lowercase().as_str() {
                "high" => Some(RiskLevel::High),
                "low" => Some(RiskLevel::Low),
                _ => None,
            };
            justification = o.get("justification").and_then(Value::as_str).unwrap_or("").trim().to_string();
        }
        if justification.is_empty() {
            justification = prose.trim().to_string();
        }
    } else {
        justification = text.trim().to_string();
    }
    if justification.is_empty() {
        justification = "no justification given".into();
    }
    match level {
        Some(level) => (RiskAssessment { level, justification }, None),
        None => (
            RiskAssessment { level: RiskLevel::Low, justification },
            Some(Diagnostic::warning(STAGE, "risk answer not understood; defaulting to low")),
        ),
    }
}

/// Feasibility of the trigger sequence. An empty sequence is low risk and
/// costs no model call; risk output is never re-prompted.
pub fn assess_risk(
    session: &mut Session<'_>,
    chain: &InvocationChain,
    trigger_seq: &[MethodConstraint],
    steps: &[&AnalysisStepRecord],
) -> Result<(RiskAssessment, Option<Diagnostic>), ChatError> {
    if trigger_seq.is_empty() {
        return Ok((
            RiskAssessment { level: RiskLevel::Low, justification: "no error-seeking constraints were inferred".into() },
            None,
        ));
    }
    let constraints: Vec<String> =
        trigger_seq.iter().map(|c| format!("- {}: {}", c.function.qualified_name, c.params_value())).collect();
    let step_lines: Vec<String> = steps
        .iter()
        .map(|s| {
            format!(
                "- {} -> {}: {}",
                s.caller.qualified_name,
                s.callee.qualified_name,
                if s.caller_constraint.rationale.is_empty() { "(no rationale)" } else { &s.caller_constraint.rationale }
            )
        })
        .collect();
    let mut conv = Conversation::with_system(prompts::system_prompt(Agent::Risk));
    conv.user(prompts::risk_user(
        &chain.describe(),
        &constraints.join("\n"),
        if step_lines.is_empty() { "(single-method chain)".into() } else { step_lines.join("\n") }.as_str(),
    ));
    let text = session.ask(&conv)?;
    Ok(parse_risk(&text))
}

/// High risk with a complete trigger sequence selects trigger mode;
/// everything else falls back to normal. `None` when both are empty.
pub fn select_constraints<'c>(
    risk: &RiskAssessment,
    trigger_seq: &'c [MethodConstraint],
    normal_seq: &'c [MethodConstraint],
) -> Option<(&'c [MethodConstraint], Mode)> {
    if risk.level == RiskLevel::High && !trigger_seq.is_empty() {
        Some((trigger_seq, Mode::Trigger))
    } else if !normal_seq.is_empty() {
        Some((normal_seq, Mode::Normal))
    } else if !trigger_seq.is_empty() {
        // only the error-seeking pass survived; generating from it beats
        // skipping the method
        Some((trigger_seq, Mode::Trigger))
    } else {
        None
    }
}

/// `{focal_id}.analysis.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisArtifact {
    pub schema_version: u32,
    pub focal: FunctionRef,
    pub chain_id: String,
    pub chain: InvocationChain,
    pub trigger_seq: Vec<MethodConstraint>,
    pub normal_seq: Vec<MethodConstraint>,
    pub focal_records: Vec<FocalRecord>,
    pub steps: Vec<AnalysisStepRecord>,
    pub risk: Option<RiskAssessment>,
    pub selected_mode: Option<Mode>,
    pub diagnostics: Vec<Diagnostic>,
}

impl AnalysisArtifact {
    pub fn new(analysis: &ChainAnalysis, risk: Option<RiskAssessment>, selected_mode: Option<Mode>) -> Self {
        let c = &analysis.constraints;
        AnalysisArtifact {
            schema_version: SCHEMA_VERSION,
            focal: c.chain.focal().clone(),
            chain_id: c.chain.id(),
            chain: c.chain.clone(),
            trigger_seq: c.trigger_seq.clone(),
            normal_seq: c.normal_seq.clone(),
            focal_records: analysis.focal_records.clone(),
            steps: analysis.steps.clone(),
            risk,
            selected_mode,
            diagnostics: analysis.diagnostics.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifact serializes")
    }
}
