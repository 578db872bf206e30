//! Labels for buggy/fixed focal-method pairs, the detection metrics and
//! the benchmark report.

use core::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutcomeLabel {
    #[serde(rename = "TP_bug")]
    TpBug,
    #[serde(rename = "FP_bug")]
    FpBug,
    #[serde(rename = "FN_bug")]
    FnBug,
    #[serde(rename = "FP_nonbug")]
    FpNonbug,
    #[serde(rename = "TN_nonbug")]
    TnNonbug,
}

impl OutcomeLabel {
    pub const ALL: [OutcomeLabel; 5] =
        [OutcomeLabel::TpBug, OutcomeLabel::FpBug, OutcomeLabel::FnBug, OutcomeLabel::FpNonbug, OutcomeLabel::TnNonbug];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeLabel::TpBug => "TP_bug",
            OutcomeLabel::FpBug => "FP_bug",
            OutcomeLabel::FnBug => "FN_bug",
            OutcomeLabel::FpNonbug => "FP_nonbug",
            OutcomeLabel::TnNonbug => "TN_nonbug",
        }
    }

    pub fn is_buggy_side(self) -> bool {
        matches!(self, OutcomeLabel::TpBug | OutcomeLabel::FpBug | OutcomeLabel::FnBug)
    }
}

impl fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A buggy method is a hit only when the fixed version stays quiet.
pub fn label_buggy_pair(reported_on_buggy: bool, reported_on_fixed: bool) -> OutcomeLabel {
    match (reported_on_buggy, reported_on_fixed) {
        (true, false) => OutcomeLabel::TpBug,
        (true, true) => OutcomeLabel::FpBug,
        (false, _) => OutcomeLabel::FnBug,
    }
}

pub fn label_nonbuggy(reported: bool) -> OutcomeLabel {
    if reported {
        OutcomeLabel::FpNonbug
    } else {
        OutcomeLabel::TnNonbug
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    #[serde(rename = "TP_bug")]
    pub tp_bug: u64,
    #[serde(rename = "FP_bug")]
    pub fp_bug: u64,
    #[serde(rename = "FN_bug")]
    pub fn_bug: u64,
    #[serde(rename = "FP_nonbug")]
    pub fp_nonbug: u64,
    #[serde(rename = "TN_nonbug")]
    pub tn_nonbug: u64,
}

impl LabelCounts {
    pub fn add(&mut self, label: OutcomeLabel) {
        *self.slot(label) += 1;
    }

    fn slot(&mut self, label: OutcomeLabel) -> &mut u64 {
        match label {
            OutcomeLabel::TpBug => &mut self.tp_bug,
            OutcomeLabel::FpBug => &mut self.fp_bug,
            OutcomeLabel::FnBug => &mut self.fn_bug,
            OutcomeLabel::FpNonbug => &mut self.fp_nonbug,
            OutcomeLabel::TnNonbug => &mut self.tn_nonbug,
        }
    }

    pub fn get(&self, label: OutcomeLabel) -> u64 {
        match label {
            OutcomeLabel::TpBug => self.tp_bug,
            OutcomeLabel::FpBug => self.fp_bug,
            OutcomeLabel::FnBug => self.fn_bug,
            OutcomeLabel::FpNonbug => self.fp_nonbug,
            OutcomeLabel::TnNonbug => self.tn_nonbug,
        }
    }

    pub fn total(&self) -> u64 {
        OutcomeLabel::ALL.iter().map(|l| self.get(*l)).sum()
    }
}

impl FromIterator<OutcomeLabel> for LabelCounts {
    fn from_iter<I: IntoIterator<Item = OutcomeLabel>>(iter: I) -> Self {
        let mut c = LabelCounts::default();
        for l in iter {
            c.add(l);
        }
        c
    }
}

/// An exact metric value, or `Undefined` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Defined(Ratio<u64>),
    Undefined,
}

impl Metric {
    fn ratio(num: u128, den: u128) -> Metric {
        if den == 0 {
            return Metric::Undefined;
        }
        let r = Ratio::new(num, den);
        match (u64::try_from(*r.numer()), u64::try_from(*r.denom())) {
            (Ok(n), Ok(d)) => Metric::Defined(Ratio::new_raw(n, d)),
            _ => panic!("metric {num}/{den} does not fit in 64 bits after reduction"),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Metric::Defined(r) => Some(*r.numer() as f64 / *r.denom() as f64),
            Metric::Undefined => None,
        }
    }

    pub fn is_defined(&self) -> bool {
        matches!(self, Metric::Defined(_))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{v:.2}"),
            None => f.write_str("undefined"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MetricRepr {
    Defined { numerator: u64, denominator: u64, value: f64 },
    Undefined(String),
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Metric::Defined(r) => MetricRepr::Defined {
                numerator: *r.numer(),
                denominator: *r.denom(),
                value: self.value().unwrap_or_default(),
            },
            Metric::Undefined => MetricRepr::Undefined("undefined".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match MetricRepr::deserialize(d)? {
            MetricRepr::Defined { numerator, denominator, .. } if denominator != 0 => {
                Ok(Metric::Defined(Ratio::new(numerator, denominator)))
            }
            MetricRepr::Undefined(s) if s == "undefined" => Ok(Metric::Undefined),
            _ => Err(serde::de::Error::custom("expected a ratio or \"undefined\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: LabelCounts,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
    pub accuracy: Metric,
}

pub fn compute_metrics(counts: &LabelCounts) -> MetricsReport {
    let c = |x: u64| u128::from(x);
    let (tp, fp_bug, fn_bug, fp_nonbug, tn) =
        (c(counts.tp_bug), c(counts.fp_bug), c(counts.fn_bug), c(counts.fp_nonbug), c(counts.tn_nonbug));
    let precision = Metric::ratio(tp, tp + fp_bug + fp_nonbug);
    let recall = Metric::ratio(tp, tp + fn_bug);
    let accuracy = Metric::ratio(tp + tn, tp + fp_bug + fp_nonbug + tn + fn_bug);
    let f1 = match (precision, recall) {
        (Metric::Defined(p), Metric::Defined(r)) => {
            let (p, r) = (widen(p), widen(r));
            let sum = p + r;
            if *sum.numer() == 0 {
                Metric::Undefined
            } else {
                let f = Ratio::from_integer(2u128) * p * r / sum;
                Metric::ratio(*f.numer(), *f.denom())
            }
        }
        _ => Metric::Undefined,
    };
    MetricsReport { counts: *counts, precision, recall, f1, accuracy }
}

fn widen(r: Ratio<u64>) -> Ratio<u128> {
    Ratio::new_raw(u128::from(*r.numer()), u128::from(*r.denom()))
}

/// Where a snapshot lives and which method in it is the focal method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRef {
    pub path: String,
    /// `Qualified.name` or `path/to/file.py::Qualified.name`.
    pub function: String,
}

impl SnapshotRef {
    pub fn qualified_name(&self) -> &str {
        self.function.rsplit_once("::").map_or(self.function.as_str(), |(_, q)| q)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocalPair {
    pub id: String,
    pub project: String,
    pub buggy: SnapshotRef,
    pub fixed: SnapshotRef,
}

impl FocalPair {
    /// Both refs must name the same method.
    pub fn check(&self) -> Result<(), String> {
        if self.buggy.qualified_name() != self.fixed.qualified_name() {
            return Err(format!(
                "pair {}: buggy function `{}` and fixed function `{}` differ",
                self.id,
                self.buggy.qualified_name(),
                self.fixed.qualified_name()
            ));
        }
        Ok(())
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<FocalPair>, serde_json::Error> {
    serde_json::from_str(text)
}

/// What the runs on one pair produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairObservation {
    pub id: String,
    pub project: String,
    /// The detector reported the buggy method.
    pub reported_on_buggy: bool,
    /// A reported test from the buggy run also raised a TypeError when
    /// replayed on the fixed snapshot.
    pub reported_on_fixed_replay: bool,
    /// The detector reported the method when run on the fixed snapshot.
    pub reported_on_fixed: bool,
    /// The buggy-side run ended in a timeout or infrastructure failure.
    pub infra: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRow {
    #[serde(flatten)]
    pub observation: PairObservation,
    pub buggy_label: OutcomeLabel,
    pub nonbug_label: OutcomeLabel,
}

impl PairRow {
    pub fn label(observation: PairObservation) -> Self {
        let buggy_label = if observation.infra {
            OutcomeLabel::FnBug
        } else {
            label_buggy_pair(observation.reported_on_buggy, observation.reported_on_fixed_replay)
        };
        let nonbug_label = label_nonbuggy(observation.reported_on_fixed);
        PairRow { observation, buggy_label, nonbug_label }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub benchmark: String,
    pub rows: Vec<PairRow>,
    #[serde(default)]
    pub skipped: Vec<SkippedPair>,
    pub metrics: MetricsReport,
}

impl Report {
    pub fn new(benchmark: &str, mut rows: Vec<PairRow>, skipped: Vec<SkippedPair>) -> Self {
        rows.sort_by(|a, b| a.observation.id.cmp(&b.observation.id));
        let counts: LabelCounts = rows.iter().flat_map(|r| [r.buggy_label, r.nonbug_label]).collect();
        Report {
            schema_version: crate::SCHEMA_VERSION,
            benchmark: benchmark.into(),
            rows,
            skipped,
            metrics: compute_metrics(&counts),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Summary table (P, R, F1, Acc) followed by per-pair labels.
    pub fn to_markdown(&self) -> String {
        let m = &self.metrics;
        let mut out = format!("# Evaluation: {}\n\n", self.benchmark);
        out.push_str("| Benchmark | P | R | F1 | Acc |\n|---|---:|---:|---:|---:|\n");
        out.push_str(&format!("| {} | {} | {} | {} | {} |\n\n", self.benchmark, m.precision, m.recall, m.f1, m.accuracy));
        let c = &m.counts;
        out.push_str(&format!(
            "Counts: TP_bug {}, FP_bug {}, FN_bug {}, FP_nonbug {}, TN_nonbug {}\n\n",
            c.tp_bug, c.fp_bug, c.fn_bug, c.fp_nonbug, c.tn_nonbug
        ));
        out.push_str("| Pair | Project | Buggy | Non-buggy | Notes |\n|---|---|---|---|---|\n");
        for r in &self.rows {
            let mut notes = r.observation.notes.clone();
            if r.observation.infra {
                notes.insert(0, "infra".into());
            }
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                r.observation.id,
                r.observation.project,
                r.buggy_label,
                r.nonbug_label,
                notes.join("; ")
            ));
        }
        if !self.skipped.is_empty() {
            out.push_str("\nSkipped:\n\n");
            for s in &self.skipped {
                out.push_str(&format!("- {}: {}\n", s.id, s.reason));
            }
        }
        out
    }
}
