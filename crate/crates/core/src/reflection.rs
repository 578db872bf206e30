//! Reflection: two reviewer agents judge a triggered TypeError, an arbiter
//! combines their verdicts, and false positives feed suggestions back into
//! generation.

use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::Session;
use crate::constraint::{MethodConstraint, Mode};
use crate::diag::Diagnostic;
use crate::llm::{ChatError, Conversation};
use crate::outcome::RunResult;
use crate::prelude::*;
use crate::project::{InvocationChain, SourceIndex};
use crate::prompts::{self, Agent};
use crate::testgen::{self, GenSpec, GeneratedTest};
use crate::text::extract_json_object;

const STAGE: &str = "reflection";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    TruePositive,
    FalsePositive,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::TruePositive => "true_positive",
            Decision::FalsePositive => "false_positive",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match normalize_word(s).as_str() {
            "true_positive" | "tp" | "true" | "bug" => Some(Decision::TruePositive),
            "false_positive" | "fp" | "false" | "not_a_bug" => Some(Decision::FalsePositive),
            _ => None,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    High,
    Medium,
    Low,
}

impl Confidence {
    fn parse(s: &str) -> Option<Self> {
        match normalize_word(s).as_str() {
            "high" => Some(Confidence::High),
            "medium" | "moderate" => Some(Confidence::Medium),
            "low" => Some(Confidence::Low),
            _ => None,
        }
    }
}

fn normalize_word(s: &str) -> String {
    s.trim().to_ascii_lowercase().replace([' ', '-'], "_")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionVerdict {
    pub decision: Decision,
    pub confidence: Confidence,
    pub rationale: String,
    #[serde(default)]
    pub suggestions: String,
}

impl ReflectionVerdict {
    /// Conservative default when a reviewer's answer cannot be parsed.
    pub fn unparseable() -> Self {
        ReflectionVerdict {
            decision: Decision::FalsePositive,
            confidence: Confidence::Low,
            rationale: "The reviewer's answer could not be parsed.".into(),
            suggestions: "Call the public entry method with inputs that satisfy the inferred constraints, and do not invent helper objects or attributes.".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    /// Both reviewers agreed at high confidence; no arbiter call.
    Agreement,
    Arbiter,
    /// The arbiter's answer was unusable.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalVerdict {
    pub decision: Decision,
    pub explanation: String,
    pub suggestions: String,
    pub source: VerdictSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reviewer {
    TypeConsistency,
    SemanticValidity,
}

impl Reviewer {
    pub fn agent(self) -> Agent {
        match self {
            Reviewer::TypeConsistency => Agent::TypeConsistency,
            Reviewer::SemanticValidity => Agent::SemanticValidity,
        }
    }

    pub fn asset_name(self) -> &'static str {
        self.agent().name()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssetError {
    #[error("few-shot asset for {agent} lacks a `## True ...` section")]
    MissingPositive { agent: &'static str },
    #[error("few-shot asset for {agent} lacks a `## False ...` section")]
    MissingNegative { agent: &'static str },
}

/// One true-error and one invalid-input example for a reviewer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotAsset {
    pub agent: Reviewer,
    pub positive_example: String,
    pub negative_example: String,
}

const TYPE_CONSISTENCY_ASSET: &str = include_str!("../../../assets/reflection/type_consistency.md");
const SEMANTIC_VALIDITY_ASSET: &str = include_str!("../../../assets/reflection/semantic_validity.md");

impl FewShotAsset {
    /// Splits a markdown asset on `## ` headings. The section whose heading
    /// starts with "True" is the positive example, "False" the negative one.
    pub fn parse(agent: Reviewer, text: &str) -> Result<Self, AssetError> {
        let mut positive = None;
        let mut negative = None;
        for section in text.split("\n## ").skip(1) {
            let (heading, body) = section.split_once('\n').unwrap_or((section, ""));
            let body = body.trim();
            if body.is_empty() {
                continue;
            }
            let heading = heading.trim().to_ascii_lowercase();
            if heading.starts_with("true") && positive.is_none() {
                positive = Some(body.to_string());
            } else if heading.starts_with("false") && negative.is_none() {
                negative = Some(body.to_string());
            }
        }
        let name = agent.asset_name();
        Ok(FewShotAsset {
            agent,
            positive_example: positive.ok_or(AssetError::MissingPositive { agent: name })?,
            negative_example: negative.ok_or(AssetError::MissingNegative { agent: name })?,
        })
    }

    pub fn builtin(agent: Reviewer) -> Self {
        let text = match agent {
            Reviewer::TypeConsistency => TYPE_CONSISTENCY_ASSET,
            Reviewer::SemanticValidity => SEMANTIC_VALIDITY_ASSET,
        };
        Self::parse(agent, text).expect("bundled few-shot assets are well formed")
    }

    pub fn system_prompt(&self) -> String {
        format!(
            "{}\n\nExample of a true type error:\n\n{}\n\nExample of a false positive caused by the test:\n\n{}",
            prompts::system_prompt(self.agent.agent()),
            self.positive_example,
            self.negative_example
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotAssets {
    pub type_consistency: FewShotAsset,
    pub semantic_validity: FewShotAsset,
}

impl Default for FewShotAssets {
    fn default() -> Self {
        FewShotAssets {
            type_consistency: FewShotAsset::builtin(Reviewer::TypeConsistency),
            semantic_validity: FewShotAsset::builtin(Reviewer::SemanticValidity),
        }
    }
}

impl FewShotAssets {
    pub fn get(&self, r: Reviewer) -> &FewShotAsset {
        match r {
            Reviewer::TypeConsistency => &self.type_consistency,
            Reviewer::SemanticValidity => &self.semantic_validity,
        }
    }
}

/// Everything the reviewers see about one failing test.
pub struct ReflectionInput<'a> {
    pub chain: &'a InvocationChain,
    /// The constraint sequence the test was generated from, focal first.
    pub constraints: &'a [MethodConstraint],
    pub mode: Mode,
    pub chain_sources: &'a str,
    pub test: &'a GeneratedTest,
    pub run: &'a RunResult,
}

/// Sources of every chain member, entry first.
pub fn chain_sources(index: &SourceIndex, chain: &InvocationChain) -> String {
    let mut out = String::new();
    for f in &chain.steps {
        let src = index.source_of(f).unwrap_or("# source unavailable");
        out.push_str(&format!("# {} ({}, lines {}-{})\n{}\n\n", f.qualified_name, f.module_path, f.line_span.0, f.line_span.1, src));
    }
    out.truncate(out.trim_end().len());
    out
}

fn constraints_text(constraints: &[MethodConstraint]) -> String {
    let mut out = String::new();
    for c in constraints {
        out.push_str(&format!("`{}`: {}\n", c.function.qualified_name, c.params_json()));
    }
    if out.is_empty() {
        out.push_str("(none inferred)\n");
    }
    out
}

fn review_user(input: &ReflectionInput<'_>) -> String {
    format!(
        "Invocation chain (entry first): {}\n\nInferred {} constraints, focal method first:\n{}\nChain sources:\n```python\n{}\n```\n\nGenerated test:\n```python\n{}\n```\n\nExecution output:\n{}",
        input.chain.describe(),
        input.mode,
        constraints_text(input.constraints),
        input.chain_sources,
        input.test.source.trim_end(),
        input.run.traceback().trim_end(),
    )
}

fn text_field(obj: &serde_json::Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter().find_map(|k| match obj.get(*k) {
        Some(Value::String(s)) => Some(s.trim().to_string()),
        Some(Value::Array(items)) => Some(
            items.iter().filter_map(Value::as_str).map(str::trim).collect::<Vec<_>>().join("\n"),
        ),
        _ => None,
    })
}

fn json_object(text: &str) -> Result<(serde_json::Map<String, Value>, String), String> {
    let (json, prose) = extract_json_object(text).ok_or_else(|| "no JSON object found".to_string())?;
    match serde_json::from_str::<Value>(json) {
        Ok(Value::Object(m)) => Ok((m, prose)),
        Ok(_) => Err("the verdict is not a JSON object".into()),
        Err(e) => Err(format!("invalid JSON: {e}")),
    }
}

fn decision_of(obj: &serde_json::Map<String, Value>) -> Result<Decision, String> {
    match obj.get("decision") {
        Some(Value::String(s)) => Decision::parse(s).ok_or_else(|| format!("unknown decision `{s}`")),
        Some(Value::Bool(b)) => Ok(if *b { Decision::TruePositive } else { Decision::FalsePositive }),
        _ => Err("missing field `decision`".into()),
    }
}

/// Parses a reviewer answer. Decision and confidence are required; a
/// missing rationale falls back to the prose around the JSON. A false
/// positive without suggestions gets one derived from the rationale.
pub fn parse_verdict(text: &str) -> Result<ReflectionVerdict, String> {
    let (obj, prose) = json_object(text)?;
    let decision = decision_of(&obj)?;
    let confidence = match obj.get("confidence") {
        Some(Value::String(s)) => Confidence::parse(s).ok_or_else(|| format!("unknown confidence `{s}`"))?,
        _ => return Err("missing field `confidence`".into()),
    };
    let rationale = text_field(&obj, &["rationale", "reason", "explanation"]).filter(|s| !s.is_empty()).unwrap_or(prose);
    let mut suggestions = text_field(&obj, &["suggestions", "suggestion"]).unwrap_or_default();
    if decision == Decision::FalsePositive && suggestions.is_empty() {
        suggestions = if rationale.is_empty() {
            ReflectionVerdict::unparseable().suggestions
        } else {
            format!("Rewrite the test so that this no longer applies: {rationale}")
        };
    }
    Ok(ReflectionVerdict { decision, confidence, rationale, suggestions })
}

/// Runs one reviewer. An unparseable answer is re-prompted once, then
/// replaced by the conservative false_positive/low default.
pub fn review(
    session: &mut Session<'_>,
    asset: &FewShotAsset,
    input: &ReflectionInput<'_>,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<ReflectionVerdict, ChatError> {
    let mut conv = Conversation::with_system(asset.system_prompt());
    conv.user(review_user(input));
    let mut err = String::new();
    for round in 0..2 {
        let text = session.ask(&conv)?;
        match parse_verdict(&text) {
            Ok(v) => return Ok(v),
            Err(e) => {
                err = e;
                if round == 0 {
                    conv.assistant(if text.trim().is_empty() { "(empty response)" } else { text.as_str() });
                    conv.user(format!("{}\n{}", prompts::malformed_reprompt(&err), prompts::VERDICT_FORMAT));
                }
            }
        }
    }
    diagnostics.push(Diagnostic::warning(
        STAGE,
        format!("{} verdict unparseable after re-prompt ({err}); defaulting to false_positive/low", asset.agent.asset_name()),
    ));
    Ok(ReflectionVerdict::unparseable())
}

pub fn check_type_consistency(
    session: &mut Session<'_>,
    assets: &FewShotAssets,
    input: &ReflectionInput<'_>,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<ReflectionVerdict, ChatError> {
    review(session, assets.get(Reviewer::TypeConsistency), input, diagnostics)
}

pub fn check_semantic_validity(
    session: &mut Session<'_>,
    assets: &FewShotAssets,
    input: &ReflectionInput<'_>,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<ReflectionVerdict, ChatError> {
    review(session, assets.get(Reviewer::SemanticValidity), input, diagnostics)
}

fn merged(parts: [&str; 2]) -> String {
    let mut out: Vec<&str> = Vec::new();
    for p in parts.into_iter().map(str::trim).filter(|p| !p.is_empty()) {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out.join("\n")
}

fn verdict_json(v: &ReflectionVerdict) -> String {
    serde_json::to_string(v).unwrap_or_default()
}

fn arbiter_user(v_type: &ReflectionVerdict, v_sem: &ReflectionVerdict, input: &ReflectionInput<'_>) -> String {
    format!(
        "Type consistency verdict:\n```json\n{}\n```\nSemantic validity verdict:\n```json\n{}\n```\n\nInvocation chain (entry first): {}\n\nInferred {} constraints, focal method first:\n{}\nChain sources:\n```python\n{}\n```",
        verdict_json(v_type),
        verdict_json(v_sem),
        input.chain.describe(),
        input.mode,
        constraints_text(input.constraints),
        input.chain_sources,
    )
}

/// Combines the two reviews. Agreement at high confidence is adopted
/// directly unless `always_arbitrate` is set.
pub fn meta_evaluate(
    session: &mut Session<'_>,
    v_type: &ReflectionVerdict,
    v_sem: &ReflectionVerdict,
    input: &ReflectionInput<'_>,
    always_arbitrate: bool,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<FinalVerdict, ChatError> {
    let all_suggestions = merged([&v_type.suggestions, &v_sem.suggestions]);
    let agreed = v_type.decision == v_sem.decision
        && v_type.confidence == Confidence::High
        && v_sem.confidence == Confidence::High;
    if agreed && !always_arbitrate {
        let decision = v_type.decision;
        return Ok(FinalVerdict {
            decision,
            explanation: merged([&v_type.rationale, &v_sem.rationale]),
            suggestions: if decision == Decision::FalsePositive { all_suggestions } else { String::new() },
            source: VerdictSource::Agreement,
        });
    }
    let mut conv = Conversation::with_system(prompts::system_prompt(Agent::Arbiter));
    conv.user(arbiter_user(v_type, v_sem, input));
    let text = session.ask(&conv)?;
    let parsed = json_object(&text).and_then(|(obj, prose)| {
        let decision = decision_of(&obj)?;
        let explanation = text_field(&obj, &["explanation", "rationale"]).filter(|s| !s.is_empty()).unwrap_or(prose);
        let suggestions = text_field(&obj, &["suggestions", "suggestion"]).unwrap_or_default();
        Ok((decision, explanation, suggestions))
    });
    let fallback_suggestions =
        if all_suggestions.is_empty() { ReflectionVerdict::unparseable().suggestions } else { all_suggestions };
    Ok(match parsed {
        Ok((decision, explanation, mut suggestions)) => {
            if decision == Decision::FalsePositive && suggestions.is_empty() {
                suggestions = fallback_suggestions;
            }
            if decision == Decision::TruePositive {
                suggestions.clear();
            }
            FinalVerdict { decision, explanation, suggestions, source: VerdictSource::Arbiter }
        }
        Err(e) => {
            diagnostics.push(Diagnostic::warning(STAGE, format!("arbiter answer unparseable ({e}); adopting false_positive")));
            FinalVerdict {
                decision: Decision::FalsePositive,
                explanation: merged([&v_type.rationale, &v_sem.rationale]),
                suggestions: fallback_suggestions,
                source: VerdictSource::Fallback,
            }
        }
    })
}

/// The full review of one failing test, as persisted in `meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub iteration: u32,
    pub type_consistency: ReflectionVerdict,
    pub semantic_validity: ReflectionVerdict,
    pub final_verdict: FinalVerdict,
    pub llm_calls: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
}

/// Type consistency, then semantic validity, then the arbiter.
pub fn reflect(
    session: &mut Session<'_>,
    assets: &FewShotAssets,
    input: &ReflectionInput<'_>,
    always_arbitrate: bool,
) -> Result<Reflection, ChatError> {
    let before = session.calls;
    let mut diagnostics = Vec::new();
    let v_type = check_type_consistency(session, assets, input, &mut diagnostics)?;
    let v_sem = check_semantic_validity(session, assets, input, &mut diagnostics)?;
    let final_verdict = meta_evaluate(session, &v_type, &v_sem, input, always_arbitrate, &mut diagnostics)?;
    Ok(Reflection {
        iteration: input.test.iteration,
        type_consistency: v_type,
        semantic_validity: v_sem,
        final_verdict,
        llm_calls: session.calls - before,
        diagnostics,
    })
}

/// Generates the next test from a false-positive verdict's suggestions.
pub fn refine(
    session: &mut Session<'_>,
    conv: &mut Conversation,
    test: &GeneratedTest,
    verdict: &FinalVerdict,
    spec: &GenSpec<'_>,
) -> Result<Result<GeneratedTest, String>, ChatError> {
    assert_eq!(verdict.decision, Decision::FalsePositive, "only false positives are refined");
    testgen::refine(session, conv, test, &verdict.suggestions, spec)
}
