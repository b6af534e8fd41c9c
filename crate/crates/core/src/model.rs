//! Shared domain types: fact statements, verdicts, formulations and QA records.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label the evaluator may use when the passage neither supports nor contradicts a fact.
pub const DEFAULT_NOT_CLEAR_LABEL: &str = "Not clear from the given passage";

pub const DEFAULT_FUNCTION_TITLE: &str = "FactChecker";

pub const DEFAULT_DESCRIPTION_TEMPLATE: &str = "It is clear from the passage that {fact}";

pub const DEFAULT_CITATION_TEMPLATE: &str = "Provide an exact excerpt from the passage which directly supports the fact: {fact}. If no supporting excerpt exists, leave this empty.";

/// Appended to every verdict-argument description.
pub const ENUM_INSTRUCTION: &str = "Respond by using one of the accepted Enum types.";

pub const FACT_PLACEHOLDER: &str = "{fact}";

/// Fact count above which a constructed function object triggers a warning.
pub const DEFAULT_FACT_WARNING_THRESHOLD: usize = 25;

fn default_fact_warning_threshold() -> usize {
    DEFAULT_FACT_WARNING_THRESHOLD
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("fact {index} has empty text")]
    EmptyFact { index: usize },
    #[error("fact indices must be 0..n-1 without gaps: expected {expected}, found {found}")]
    NonContiguousIndex { expected: usize, found: usize },
    #[error("duplicate fact index {0}")]
    DuplicateIndex(usize),
    #[error("template must contain exactly one `{{fact}}` placeholder, found {0}")]
    BadTemplate(usize),
    #[error("not-clear label must be non-empty and is only allowed with the T/F/N domain")]
    BadNotClearLabel,
    #[error("answer text for {0} is empty")]
    EmptyAnswer(AnswerKind),
    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
}

/// One declarative sentence to verify, keyed by its position in the fact list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactStatement {
    pub index: usize,
    pub text: String,
}

impl FactStatement {
    pub fn new(index: usize, text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyFact { index });
        }
        Ok(Self { index, text })
    }

    pub fn verdict_arg(&self) -> String {
        format!("fact_{}", self.index)
    }

    pub fn citation_arg(&self) -> String {
        format!("citation_{}", self.index)
    }
}

/// Build an indexed fact list from plain strings.
pub fn index_facts<I, S>(texts: I) -> Result<Vec<FactStatement>, ModelError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| FactStatement::new(i, t))
        .collect()
}

/// Checks the 0..n-1 indexing invariant. Order in the slice must follow the indices.
pub fn check_fact_indices(facts: &[FactStatement]) -> Result<(), ModelError> {
    let mut seen = std::collections::BTreeSet::new();
    for (pos, fact) in facts.iter().enumerate() {
        if fact.text.trim().is_empty() {
            return Err(ModelError::EmptyFact { index: fact.index });
        }
        if !seen.insert(fact.index) {
            return Err(ModelError::DuplicateIndex(fact.index));
        }
        if fact.index != pos {
            return Err(ModelError::NonContiguousIndex {
                expected: pos,
                found: fact.index,
            });
        }
    }
    Ok(())
}

/// Outcome for one fact after parsing a model response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    True,
    False,
    NotClear,
    /// Format failure on the single permitted attempt.
    NotAnswered,
}

impl Verdict {
    pub fn is_answered(self) -> bool {
        self != Verdict::NotAnswered
    }

    /// Binary reading used for scoring; `NotClear` counts as a rejection.
    pub fn as_label(self) -> Option<Label> {
        match self {
            Verdict::True => Some(Label::True),
            Verdict::False | Verdict::NotClear => Some(Label::False),
            Verdict::NotAnswered => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::True => "True",
            Verdict::False => "False",
            Verdict::NotClear => "NotClear",
            Verdict::NotAnswered => "N/A",
        };
        f.write_str(s)
    }
}

/// Human gold label. Strictly binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    True,
    False,
}

impl From<Label> for Verdict {
    fn from(l: Label) -> Self {
        match l {
            Label::True => Verdict::True,
            Label::False => Verdict::False,
        }
    }
}

/// Post-invocation rewrite applied to parsed verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictMapping {
    #[default]
    NotClearToFalse,
    Identity,
}

impl VerdictMapping {
    pub fn apply(self, v: Verdict) -> Verdict {
        match (self, v) {
            (VerdictMapping::NotClearToFalse, Verdict::NotClear) => Verdict::False,
            (_, v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseDomain {
    /// True / False
    TF,
    /// True / False / not-clear
    TFN,
}

/// Control parameters for building a fact-checking function object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormulationConfig {
    pub response_domain: ResponseDomain,
    pub with_citation: bool,
    pub description_template: String,
    pub citation_template: String,
    /// Present iff `response_domain` is `TFN`.
    pub not_clear_label: Option<String>,
    pub mapping: VerdictMapping,
    pub function_title: String,
    #[serde(default = "default_fact_warning_threshold")]
    pub fact_warning_threshold: usize,
}

impl FormulationConfig {
    pub fn new(response_domain: ResponseDomain, with_citation: bool) -> Self {
        Self {
            response_domain,
            with_citation,
            description_template: DEFAULT_DESCRIPTION_TEMPLATE.to_string(),
            citation_template: DEFAULT_CITATION_TEMPLATE.to_string(),
            not_clear_label: match response_domain {
                ResponseDomain::TF => None,
                ResponseDomain::TFN => Some(DEFAULT_NOT_CLEAR_LABEL.to_string()),
            },
            mapping: VerdictMapping::NotClearToFalse,
            function_title: DEFAULT_FUNCTION_TITLE.to_string(),
            fact_warning_threshold: DEFAULT_FACT_WARNING_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for template in [&self.description_template, &self.citation_template] {
            let n = template.matches(FACT_PLACEHOLDER).count();
            if n != 1 {
                return Err(ModelError::BadTemplate(n));
            }
        }
        match (&self.response_domain, &self.not_clear_label) {
            (ResponseDomain::TF, None) => Ok(()),
            (ResponseDomain::TFN, Some(label)) if !label.trim().is_empty() => Ok(()),
            _ => Err(ModelError::BadNotClearLabel),
        }
    }

    /// Accepted verdict strings, in the order they are advertised.
    pub fn enum_domain(&self) -> Vec<String> {
        let mut domain = vec!["True".to_string(), "False".to_string()];
        if let (ResponseDomain::TFN, Some(label)) = (self.response_domain, &self.not_clear_label) {
            domain.push(label.clone());
        }
        domain
    }
}

/// The five verification set-ups that can be selected by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FormulationId {
    #[serde(rename = "prompt-tf")]
    PromptTf,
    #[serde(rename = "faaf-tf")]
    FaafTf,
    #[serde(rename = "faaf-tfn")]
    FaafTfn,
    #[serde(rename = "faaf-tf-cit")]
    FaafTfCit,
    #[serde(rename = "faaf-tfn-cit")]
    FaafTfnCit,
}

impl FormulationId {
    pub const ALL: [FormulationId; 5] = [
        FormulationId::PromptTf,
        FormulationId::FaafTf,
        FormulationId::FaafTfn,
        FormulationId::FaafTfCit,
        FormulationId::FaafTfnCit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FormulationId::PromptTf => "prompt-tf",
            FormulationId::FaafTf => "faaf-tf",
            FormulationId::FaafTfn => "faaf-tfn",
            FormulationId::FaafTfCit => "faaf-tf-cit",
            FormulationId::FaafTfnCit => "faaf-tfn-cit",
        }
    }

    /// Display name in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            FormulationId::PromptTf => "Prompt(T/F)",
            FormulationId::FaafTf => "FaaF(T/F)",
            FormulationId::FaafTfn => "FaaF(T/F/N)",
            FormulationId::FaafTfCit => "FaaF(T/F)+citation",
            FormulationId::FaafTfnCit => "FaaF(T/F/N)+citation",
        }
    }

    pub fn formulation(self) -> Formulation {
        let faaf = |d, c| Formulation::Faaf(FormulationConfig::new(d, c));
        match self {
            FormulationId::PromptTf => Formulation::Prompt,
            FormulationId::FaafTf => faaf(ResponseDomain::TF, false),
            FormulationId::FaafTfn => faaf(ResponseDomain::TFN, false),
            FormulationId::FaafTfCit => faaf(ResponseDomain::TF, true),
            FormulationId::FaafTfnCit => faaf(ResponseDomain::TFN, true),
        }
    }
}

impl fmt::Display for FormulationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FormulationId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FormulationId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown formulation `{s}` (expected one of: {})",
                    FormulationId::ALL.map(|f| f.as_str()).join(", ")
                )
            })
    }
}

/// Either the function-calling route or the one-fact-per-prompt baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Formulation {
    Prompt,
    Faaf(FormulationConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    GroundTruth,
    Ungrounded,
    Poor,
}

impl AnswerKind {
    /// Fixed reporting order.
    pub const ALL: [AnswerKind; 3] = [AnswerKind::GroundTruth, AnswerKind::Ungrounded, AnswerKind::Poor];

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerKind::GroundTruth => "ground_truth",
            AnswerKind::Ungrounded => "ungrounded",
            AnswerKind::Poor => "poor",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            AnswerKind::GroundTruth => "Ground Truth Answer",
            AnswerKind::Ungrounded => "Ungrounded Answer",
            AnswerKind::Poor => "Poor Answer",
        }
    }
}

impl fmt::Display for AnswerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnswerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ground_truth" | "ground-truth" | "gt" => Ok(AnswerKind::GroundTruth),
            "ungrounded" => Ok(AnswerKind::Ungrounded),
            "poor" => Ok(AnswerKind::Poor),
            other => Err(format!(
                "unknown answer variant `{other}` (expected ground_truth, ungrounded or poor)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerVariant {
    pub kind: AnswerKind,
    pub text: String,
}

impl AnswerVariant {
    pub fn new(kind: AnswerKind, text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyAnswer(kind));
        }
        Ok(Self { kind, text })
    }
}

/// A question with its answer variants, derived facts and human labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QARecord {
    pub id: String,
    pub question: String,
    pub answers: BTreeMap<AnswerKind, String>,
    pub facts: Vec<FactStatement>,
    pub gold_labels: BTreeMap<(AnswerKind, usize), Label>,
}

impl QARecord {
    pub fn answer(&self, kind: AnswerKind) -> Option<&str> {
        self.answers.get(&kind).map(String::as_str)
    }

    /// True when every fact carries a label for `kind`.
    pub fn is_annotated(&self, kind: AnswerKind) -> bool {
        !self.facts.is_empty()
            && self
                .facts
                .iter()
                .all(|f| self.gold_labels.contains_key(&(kind, f.index)))
    }

    pub fn gold(&self, kind: AnswerKind) -> BTreeMap<usize, Label> {
        self.gold_labels
            .range((kind, 0)..=(kind, usize::MAX))
            .map(|(&(_, i), &l)| (i, l))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |reason: String| ModelError::InvalidRecord {
            id: self.id.clone(),
            reason,
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id".into()));
        }
        if self.question.trim().is_empty() {
            return Err(invalid("empty question".into()));
        }
        for (kind, text) in &self.answers {
            if text.trim().is_empty() {
                return Err(invalid(format!("empty {kind} answer")));
            }
        }
        check_fact_indices(&self.facts).map_err(|e| invalid(e.to_string()))?;
        // A variant is either unannotated or fully annotated.
        for &kind in self.answers.keys() {
            if !self.is_annotated(kind) && !self.gold(kind).is_empty() {
                let fact = self
                    .facts
                    .iter()
                    .find(|f| !self.gold_labels.contains_key(&(kind, f.index)))
                    .map_or(0, |f| f.index);
                return Err(invalid(format!("missing gold label for {kind} fact {fact}")));
            }
        }
        for &(kind, index) in self.gold_labels.keys() {
            if !self.answers.contains_key(&kind) {
                return Err(invalid(format!("label for absent {kind} answer")));
            }
            if index >= self.facts.len() {
                return Err(invalid(format!("label for unknown fact {index}")));
            }
        }
        if let Some((&(_, index), _)) = self
            .gold_labels
            .iter()
            .find(|(&(k, _), &l)| k == AnswerKind::GroundTruth && l == Label::False)
        {
            return Err(invalid(format!(
                "ground-truth fact {index} is labelled False; derived facts are true by construction"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fact_rejects_blank_text() {
        assert_eq!(FactStatement::new(0, "  \n"), Err(ModelError::EmptyFact { index: 0 }));
    }

    #[test]
    fn index_check_catches_gaps_and_duplicates() {
        let mut facts = index_facts(["a", "b", "c"]).unwrap();
        assert!(check_fact_indices(&facts).is_ok());
        facts[2].index = 1;
        assert_eq!(check_fact_indices(&facts), Err(ModelError::DuplicateIndex(1)));
        facts[2].index = 3;
        assert!(matches!(
            check_fact_indices(&facts),
            Err(ModelError::NonContiguousIndex { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn mapping_is_idempotent() {
        for m in [VerdictMapping::NotClearToFalse, VerdictMapping::Identity] {
            for v in [Verdict::True, Verdict::False, Verdict::NotClear, Verdict::NotAnswered] {
                assert_eq!(m.apply(m.apply(v)), m.apply(v));
            }
        }
        assert_eq!(VerdictMapping::NotClearToFalse.apply(Verdict::NotClear), Verdict::False);
    }

    #[test]
    fn formulation_config_validation() {
        let mut cfg = FormulationConfig::new(ResponseDomain::TFN, false);
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.enum_domain().last().unwrap(), DEFAULT_NOT_CLEAR_LABEL);
        cfg.response_domain = ResponseDomain::TF;
        assert_eq!(cfg.validate(), Err(ModelError::BadNotClearLabel));
        let mut cfg = FormulationConfig::new(ResponseDomain::TF, false);
        cfg.description_template = "{fact} and {fact}".into();
        assert_eq!(cfg.validate(), Err(ModelError::BadTemplate(2)));
    }

    #[test]
    fn formulation_ids_round_trip_through_strings() {
        for id in FormulationId::ALL {
            assert_eq!(id.as_str().parse::<FormulationId>().unwrap(), id);
        }
        assert!("faaf-xyz".parse::<FormulationId>().is_err());
    }

    fn record() -> QARecord {
        let mut answers = BTreeMap::new();
        answers.insert(AnswerKind::GroundTruth, "A passage.".to_string());
        answers.insert(AnswerKind::Poor, "Nothing.".to_string());
        let mut gold_labels = BTreeMap::new();
        for i in 0..2 {
            gold_labels.insert((AnswerKind::GroundTruth, i), Label::True);
            gold_labels.insert((AnswerKind::Poor, i), Label::False);
        }
        QARecord {
            id: "q1".into(),
            question: "Q?".into(),
            answers,
            facts: index_facts(["F0.", "F1."]).unwrap(),
            gold_labels,
        }
    }

    #[test]
    fn record_validation() {
        let rec = record();
        rec.validate().unwrap();
        assert_eq!(rec.gold(AnswerKind::Poor).len(), 2);

        let mut missing = rec.clone();
        missing.gold_labels.remove(&(AnswerKind::Poor, 1));
        assert!(missing.validate().is_err());

        let mut unlabelled = rec.clone();
        unlabelled.gold_labels.retain(|&(k, _), _| k != AnswerKind::Poor);
        unlabelled.validate().unwrap();
        assert!(!unlabelled.is_annotated(AnswerKind::Poor));

        let mut false_gt = rec;
        false_gt.gold_labels.insert((AnswerKind::GroundTruth, 0), Label::False);
        assert!(false_gt.validate().is_err());
    }
}
