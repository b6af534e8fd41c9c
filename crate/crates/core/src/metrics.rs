//! Scoring and reports.
//!
//! False is the positive class: a true positive is a fact the humans marked
//! False that the model also rejected. Unanswered facts are left out of ER
//! and F1 and reported separately.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EvaluationRun;
use crate::model::{AnswerKind, FormulationId, Label, Verdict};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no answered facts to score")]
    NoAnsweredFacts,
    #[error("fact {0} has a verdict but no gold label")]
    MissingGold(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub na: u64,
}

impl ConfusionCounts {
    /// Counts every gold-labelled fact once. A fact missing from `pred` is
    /// treated as not answered.
    pub fn tally(pred: &BTreeMap<usize, Verdict>, gold: &BTreeMap<usize, Label>) -> Result<Self, MetricsError> {
        if let Some(&i) = pred.keys().find(|i| !gold.contains_key(i)) {
            return Err(MetricsError::MissingGold(i));
        }
        let mut c = Self::default();
        for (i, &g) in gold {
            let predicted = pred.get(i).copied().unwrap_or(Verdict::NotAnswered).as_label();
            match (predicted, g) {
                (None, _) => c.na += 1,
                (Some(Label::False), Label::False) => c.tp += 1,
                (Some(Label::False), Label::True) => c.fp += 1,
                (Some(Label::True), Label::True) => c.tn += 1,
                (Some(Label::True), Label::False) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn answered(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn total(&self) -> u64 {
        self.answered() + self.na
    }

    pub fn error_rate(&self) -> Result<f64, MetricsError> {
        match self.answered() {
            0 => Err(MetricsError::NoAnsweredFacts),
            n => Ok(100.0 * (self.fp + self.fn_) as f64 / n as f64),
        }
    }

    pub fn f1_micro_false(&self) -> Result<f64, MetricsError> {
        if self.answered() == 0 {
            return Err(MetricsError::NoAnsweredFacts);
        }
        if self.tp + self.fp == 0 || self.tp + self.fn_ == 0 {
            return Ok(0.0);
        }
        let p = self.tp as f64 / (self.tp + self.fp) as f64;
        let r = self.tp as f64 / (self.tp + self.fn_) as f64;
        if p + r == 0.0 {
            return Ok(0.0);
        }
        Ok(200.0 * p * r / (p + r))
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
        self.na += o.na;
    }
}

pub fn error_rate(pred: &BTreeMap<usize, Verdict>, gold: &BTreeMap<usize, Label>) -> Result<f64, MetricsError> {
    ConfusionCounts::tally(pred, gold)?.error_rate()
}

pub fn f1_micro_false(pred: &BTreeMap<usize, Verdict>, gold: &BTreeMap<usize, Label>) -> Result<f64, MetricsError> {
    ConfusionCounts::tally(pred, gold)?.f1_micro_false()
}

/// Half-up rounding to one decimal, for display.
pub fn round1(x: f64) -> f64 {
    // The nudge absorbs representation error such as 0.15 stored as 0.1499..
    ((x * 10.0) + 0.5 + 1e-9).floor() / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub variant: AnswerKind,
    pub formulation: FormulationId,
    pub backend: String,
    pub counts: ConfusionCounts,
    pub er: Option<f64>,
    pub f1m: Option<f64>,
}

impl ScoreRow {
    pub fn na_cell(&self) -> String {
        format!("{}/{}", self.counts.na, self.counts.total())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub formulation: FormulationId,
    pub backend: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub calls: u64,
    pub upstream_calls: u64,
}

impl CostRow {
    fn new(formulation: FormulationId, backend: &str) -> Self {
        Self {
            formulation,
            backend: backend.to_string(),
            prompt_tokens: 0,
            completion_tokens: 0,
            total_tokens: 0,
            calls: 0,
            upstream_calls: 0,
        }
    }

    fn absorb(&mut self, o: &CostRow) {
        self.prompt_tokens += o.prompt_tokens;
        self.completion_tokens += o.completion_tokens;
        self.total_tokens += o.total_tokens;
        self.calls += o.calls;
        self.upstream_calls += o.upstream_calls;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ScoreRow>,
    pub costs: Vec<CostRow>,
}

type CellKey = (usize, String, AnswerKind);

fn formulation_rank(f: FormulationId) -> usize {
    FormulationId::ALL.iter().position(|&x| x == f).unwrap_or(usize::MAX)
}

/// Token and call totals for every (formulation, backend) in `run`.
pub fn cost_summary(run: &EvaluationRun) -> Vec<CostRow> {
    let mut by_key: BTreeMap<(usize, String), CostRow> = BTreeMap::new();
    for v in &run.verifications {
        let row = by_key
            .entry((formulation_rank(v.formulation), v.backend.clone()))
            .or_insert_with(|| CostRow::new(v.formulation, &v.backend));
        row.prompt_tokens += v.usage.prompt_tokens;
        row.completion_tokens += v.usage.completion_tokens;
        row.total_tokens += v.usage.total_tokens();
        row.calls += v.usage.call_count;
        row.upstream_calls += v.usage.upstream_calls;
    }
    by_key.into_values().collect()
}

/// Logical calls per answer variant.
pub fn calls_by_variant(run: &EvaluationRun) -> BTreeMap<AnswerKind, u64> {
    let mut out = BTreeMap::new();
    for v in &run.verifications {
        *out.entry(v.variant).or_default() += v.usage.call_count;
    }
    out
}

/// Scores and costs for one or more runs. Rows are ordered by formulation,
/// then backend name, then variant.
pub fn build_report(runs: &[EvaluationRun]) -> Result<ReportTable, MetricsError> {
    let mut cells: BTreeMap<CellKey, (FormulationId, ConfusionCounts)> = BTreeMap::new();
    let mut costs: BTreeMap<(usize, String), CostRow> = BTreeMap::new();
    for run in runs {
        // Unannotated answers still cost tokens but cannot be scored.
        for v in run.verifications.iter().filter(|v| !v.gold.is_empty()) {
            let key = (formulation_rank(v.formulation), v.backend.clone(), v.variant);
            let counts = ConfusionCounts::tally(&v.result.verdicts, &v.gold)?;
            cells.entry(key).or_insert((v.formulation, ConfusionCounts::default())).1 += counts;
        }
        for c in cost_summary(run) {
            costs
                .entry((formulation_rank(c.formulation), c.backend.clone()))
                .or_insert_with(|| CostRow::new(c.formulation, &c.backend))
                .absorb(&c);
        }
    }
    let rows = cells
        .into_iter()
        .map(|((_, backend, variant), (formulation, counts))| ScoreRow {
            variant,
            formulation,
            backend,
            er: counts.error_rate().ok(),
            f1m: counts.f1_micro_false().ok(),
            counts,
        })
        .collect();
    Ok(ReportTable {
        rows,
        costs: costs.into_values().collect(),
    })
}

const UNDEFINED: &str = "—";

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| UNDEFINED.to_string(), |v| format!("{:.1}", round1(v)))
}

/// Plain-text tables: one line per (formulation, backend) with N/A, ER and
/// F1m for each answer variant, followed by the token table.
pub fn render_text(table: &ReportTable) -> String {
    let variants: Vec<AnswerKind> = AnswerKind::ALL
        .into_iter()
        .filter(|k| table.rows.iter().any(|r| r.variant == *k))
        .collect();
    let mut groups: Vec<(FormulationId, &str)> = Vec::new();
    for r in &table.rows {
        if !groups.contains(&(r.formulation, r.backend.as_str())) {
            groups.push((r.formulation, r.backend.as_str()));
        }
    }
    let label = |f: FormulationId, b: &str| format!("{} [{b}]", f.display_name());
    let first_w = groups
        .iter()
        .map(|&(f, b)| label(f, b).chars().count())
        .chain(["Facts formulation".len()])
        .max()
        .unwrap_or(0);
    let cell_w = 9;
    let mut out = String::new();

    let _ = write!(out, "{:first_w$}", "");
    for v in &variants {
        let _ = write!(out, " | {:^w$}", v.display_name(), w = cell_w * 3 + 2);
    }
    out.push('\n');
    let _ = write!(out, "{:first_w$}", "Facts formulation");
    for _ in &variants {
        let _ = write!(out, " | {:>cell_w$} {:>cell_w$} {:>cell_w$}", "N/A", "ER", "F1m");
    }
    out.push('\n');
    let width = out.lines().last().map_or(0, |l| l.chars().count());
    out.push_str(&"-".repeat(width));
    out.push('\n');

    let mut undefined = false;
    for &(f, b) in &groups {
        let _ = write!(out, "{:first_w$}", label(f, b));
        for &v in &variants {
            match table.rows.iter().find(|r| r.formulation == f && r.backend == b && r.variant == v) {
                Some(r) => {
                    undefined |= r.er.is_none();
                    let _ = write!(out, " | {:>cell_w$} {:>cell_w$} {:>cell_w$}", r.na_cell(), pct(r.er), pct(r.f1m));
                }
                None => {
                    let _ = write!(out, " | {:>cell_w$} {:>cell_w$} {:>cell_w$}", "", "", "");
                }
            }
        }
        out.push('\n');
    }
    if undefined {
        let _ = writeln!(out, "{UNDEFINED} every fact in the cell was unanswered; ER and F1m are undefined.");
    }

    if !table.costs.is_empty() {
        out.push('\n');
        let _ = writeln!(
            out,
            "{:first_w$} | {:>13} | {:>17} | {:>12} | {:>6}",
            "Tokens", "prompt", "completion", "total", "calls"
        );
        for c in &table.costs {
            let _ = writeln!(
                out,
                "{:first_w$} | {:>13} | {:>17} | {:>12} | {:>6}",
                label(c.formulation, &c.backend),
                c.prompt_tokens,
                c.completion_tokens,
                c.total_tokens,
                c.calls
            );
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_num(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub const SCORE_CSV_HEADER: &str = "variant,formulation,backend,na,er,f1m";
pub const COST_CSV_HEADER: &str = "formulation,backend,prompt_tokens,completion_tokens,total_tokens,calls";

/// Score rows at full precision; undefined values are empty fields.
pub fn render_scores_csv(table: &ReportTable) -> String {
    let mut out = format!("{SCORE_CSV_HEADER}\n");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.variant,
            r.formulation,
            csv_field(&r.backend),
            r.na_cell(),
            csv_num(r.er),
            csv_num(r.f1m)
        );
    }
    out
}

pub fn render_costs_csv(table: &ReportTable) -> String {
    let mut out = format!("{COST_CSV_HEADER}\n");
    for c in &table.costs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.formulation,
            csv_field(&c.backend),
            c.prompt_tokens,
            c.completion_tokens,
            c.total_tokens,
            c.calls
        );
    }
    out
}
