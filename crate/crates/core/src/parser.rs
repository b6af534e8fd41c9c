//! Turns raw model output back into per-fact verdicts.
//!
//! Tool responses are validated strictly against the function object: one
//! attempt, exact enum strings, per-argument failure isolation. The prompt
//! baseline uses a deliberately naive word match.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::constructor::{ArgRole, Dialect, FactFunctionSpec, ValueDomain};
use crate::gateway::UsageRecord;
use crate::model::Verdict;
use crate::xml;

/// Body returned by a backend, kept byte-exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawModelOutput {
    pub dialect: Dialect,
    pub body: String,
    pub usage: UsageRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureReason {
    MissingArgument,
    NullVerdict,
    EnumMismatch { value: String },
    NonStringValue,
    WholeResponseUnparseable { detail: String },
    /// Free-text answer mentions neither verdict word.
    NoVerdictWord,
    /// The backend call itself failed; no body to parse.
    CallFailed { detail: String },
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureReason::MissingArgument => f.write_str("argument missing from response"),
            FailureReason::NullVerdict => f.write_str("verdict argument is null"),
            FailureReason::EnumMismatch { value } => write!(f, "value {value:?} is not an accepted enum member"),
            FailureReason::NonStringValue => f.write_str("verdict argument is not a string"),
            FailureReason::WholeResponseUnparseable { detail } => write!(f, "response unparseable: {detail}"),
            FailureReason::NoVerdictWord => f.write_str("no True/False word in the answer"),
            FailureReason::CallFailed { detail } => write!(f, "call failed: {detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactFailure {
    pub fact_index: usize,
    pub reason: FailureReason,
}

/// The invoked function object: a verdict for every fact index.
///
/// `verdicts` holds every index; an index is `NotAnswered` iff it also
/// appears in `failures`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InvocationResult {
    pub verdicts: BTreeMap<usize, Verdict>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub citations: BTreeMap<usize, Option<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FactFailure>,
}

impl InvocationResult {
    /// Every fact recorded as not answered for the same reason.
    pub fn all_failed(fact_indices: impl IntoIterator<Item = usize>, reason: FailureReason) -> Self {
        let mut out = Self::default();
        for i in fact_indices {
            out.fail(i, reason.clone());
        }
        out
    }

    pub fn fail(&mut self, fact_index: usize, reason: FailureReason) {
        self.verdicts.insert(fact_index, Verdict::NotAnswered);
        self.failures.push(FactFailure { fact_index, reason });
    }

    pub fn answered(&self) -> usize {
        self.verdicts.values().filter(|v| v.is_answered()).count()
    }

    pub fn not_answered(&self) -> usize {
        self.verdicts.len() - self.answered()
    }

    pub fn is_consistent(&self) -> bool {
        let failed: std::collections::BTreeSet<_> = self.failures.iter().map(|f| f.fact_index).collect();
        failed.len() == self.failures.len()
            && self
                .verdicts
                .iter()
                .all(|(i, v)| (*v == Verdict::NotAnswered) == failed.contains(i))
            && failed.iter().all(|i| self.verdicts.contains_key(i))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("value {value:?} is not one of {domain:?}")]
pub struct EnumMismatch {
    pub value: String,
    pub domain: Vec<String>,
}

/// Exact, case-sensitive membership test.
pub fn validate_enum<'a>(value: &'a str, domain: &[String]) -> Result<&'a str, EnumMismatch> {
    debug_assert!(!domain.is_empty());
    if domain.iter().any(|d| d == value) {
        Ok(value)
    } else {
        Err(EnumMismatch {
            value: value.to_string(),
            domain: domain.to_vec(),
        })
    }
}

/// One argument value as extracted from either dialect.
enum ArgValue {
    Missing,
    Null,
    Text(String),
    Other,
}

fn extract_json(body: &str) -> Result<BTreeMap<String, ArgValue>, String> {
    let value: Value = serde_json::from_str(body.trim()).map_err(|e| e.to_string())?;
    let Value::Object(map) = value else {
        return Err("response is not a JSON object".into());
    };
    Ok(map
        .into_iter()
        .map(|(k, v)| {
            let v = match v {
                Value::Null => ArgValue::Null,
                Value::String(s) => ArgValue::Text(s),
                _ => ArgValue::Other,
            };
            (k, v)
        })
        .collect())
}

fn extract_xml(body: &str, title: &str) -> Result<BTreeMap<String, ArgValue>, String> {
    let invoke = xml::parse_embedded(body, "invoke").map_err(|e| e.to_string())?;
    let tool = invoke
        .child("tool_name")
        .map(|e| e.text().trim().to_string())
        .or_else(|| invoke.attribute("name").map(str::to_string));
    if let Some(tool) = tool {
        if tool != title {
            return Err(format!("invocation of unknown tool {tool:?}"));
        }
    }
    let params = invoke
        .child("parameters")
        .ok_or_else(|| "invoke block has no <parameters>".to_string())?;
    let mut out = BTreeMap::new();
    for p in params.elements() {
        if out.contains_key(&p.name) {
            log::warn!("duplicate parameter <{}> in response; keeping the first", p.name);
            continue;
        }
        let v = if p.has_element_children() {
            ArgValue::Other
        } else {
            // Whitespace around XML text is layout, not content.
            match p.text().trim() {
                "" | "null" => ArgValue::Null,
                t => ArgValue::Text(t.to_string()),
            }
        };
        out.insert(p.name.clone(), v);
    }
    Ok(out)
}

/// Parses a tool-call response. Never retries; a malformed body marks every
/// fact as not answered, otherwise failures are isolated per argument.
pub fn parse_tool_response(raw: &RawModelOutput, spec: &FactFunctionSpec) -> InvocationResult {
    let indices = spec.verdict_args().map(|a| a.fact_index);
    let extracted = match raw.dialect {
        Dialect::JsonTool => extract_json(&raw.body),
        Dialect::XmlTool => extract_xml(&raw.body, &spec.title),
        Dialect::PlainText => Err("plain text is not a tool-call dialect".into()),
    };
    let mut args = match extracted {
        Ok(args) => args,
        Err(detail) => {
            return InvocationResult::all_failed(indices, FailureReason::WholeResponseUnparseable { detail });
        }
    };

    let mut result = InvocationResult::default();
    for arg in &spec.arguments {
        let value = args.remove(&arg.name).unwrap_or(ArgValue::Missing);
        match (&arg.role, &arg.domain) {
            (ArgRole::Citation, _) => {
                let citation = match value {
                    ArgValue::Text(s) if !s.is_empty() => Some(s),
                    ArgValue::Other => {
                        log::warn!("{}: non-string citation ignored", arg.name);
                        None
                    }
                    _ => None,
                };
                result.citations.insert(arg.fact_index, citation);
            }
            (ArgRole::Verdict, ValueDomain::Enum(domain)) => match value {
                ArgValue::Missing => result.fail(arg.fact_index, FailureReason::MissingArgument),
                ArgValue::Null => result.fail(arg.fact_index, FailureReason::NullVerdict),
                ArgValue::Other => result.fail(arg.fact_index, FailureReason::NonStringValue),
                ArgValue::Text(s) => match validate_enum(&s, domain) {
                    Ok(v) => {
                        let verdict = match v {
                            "True" => Verdict::True,
                            "False" => Verdict::False,
                            _ => Verdict::NotClear,
                        };
                        result
                            .verdicts
                            .insert(arg.fact_index, spec.post_mapping.apply(verdict));
                    }
                    Err(e) => result.fail(arg.fact_index, FailureReason::EnumMismatch { value: e.value }),
                },
            },
            (ArgRole::Verdict, ValueDomain::NullableString) => {
                unreachable!("verdict arguments always carry an enum domain")
            }
        }
    }
    for extra in args.keys() {
        log::warn!("ignoring unknown argument {extra:?} in response");
    }
    result
}

fn word_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"(?i)\b(true|false)\b").expect("static regex"))
}

/// Word-match reading of a free-text answer: the first whole-word "true" or
/// "false" (any case) decides. Intentionally fragile.
pub fn parse_prompt_response(body: &str) -> Verdict {
    match word_pattern().find(body) {
        Some(m) if m.as_str().eq_ignore_ascii_case("true") => Verdict::True,
        Some(_) => Verdict::False,
        None => Verdict::NotAnswered,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructor::build_fact_function;
    use crate::model::{index_facts, FormulationConfig, ResponseDomain, DEFAULT_NOT_CLEAR_LABEL};

    fn spec(n: usize, domain: ResponseDomain, citation: bool) -> FactFunctionSpec {
        let facts = index_facts((0..n).map(|i| format!("Fact {i}."))).unwrap();
        build_fact_function(&facts, &FormulationConfig::new(domain, citation)).unwrap()
    }

    fn raw(dialect: Dialect, body: &str) -> RawModelOutput {
        RawModelOutput {
            dialect,
            body: body.to_string(),
            usage: UsageRecord::default(),
        }
    }

    #[test]
    fn minimal_valid_json() {
        let r = parse_tool_response(&raw(Dialect::JsonTool, r#"{"fact_0":"True"}"#), &spec(1, ResponseDomain::TF, false));
        assert_eq!(r.verdicts, BTreeMap::from([(0, Verdict::True)]));
        assert!(r.failures.is_empty());
    }

    #[test]
    fn not_clear_maps_to_false() {
        let body = format!(r#"{{"fact_0":"True","fact_1":"False","fact_2":"{DEFAULT_NOT_CLEAR_LABEL}"}}"#);
        let r = parse_tool_response(&raw(Dialect::JsonTool, &body), &spec(3, ResponseDomain::TFN, false));
        assert_eq!(r.verdicts[&2], Verdict::False);
        assert!(r.failures.is_empty());
    }

    #[test]
    fn not_clear_is_rejected_under_tf() {
        let body = format!(r#"{{"fact_0":"{DEFAULT_NOT_CLEAR_LABEL}"}}"#);
        let r = parse_tool_response(&raw(Dialect::JsonTool, &body), &spec(1, ResponseDomain::TF, false));
        assert_eq!(r.verdicts[&0], Verdict::NotAnswered);
    }

    #[test]
    fn null_citation_and_verdict() {
        let body = r#"{"citation_0":"Fact 0.","fact_0":"True","citation_1":null,"fact_1":null}"#;
        let r = parse_tool_response(&raw(Dialect::JsonTool, body), &spec(2, ResponseDomain::TF, true));
        assert_eq!(r.verdicts[&0], Verdict::True);
        assert_eq!(r.verdicts[&1], Verdict::NotAnswered);
        assert_eq!(
            r.failures,
            vec![FactFailure { fact_index: 1, reason: FailureReason::NullVerdict }]
        );
        assert_eq!(r.citations[&0].as_deref(), Some("Fact 0."));
        assert_eq!(r.citations[&1], None);
    }

    #[test]
    fn lowercase_enum_is_a_mismatch() {
        let r = parse_tool_response(&raw(Dialect::JsonTool, r#"{"fact_0":"true"}"#), &spec(1, ResponseDomain::TF, false));
        assert_eq!(r.verdicts[&0], Verdict::NotAnswered);
        assert_eq!(r.failures[0].reason, FailureReason::EnumMismatch { value: "true".into() });
    }

    #[test]
    fn missing_and_non_string_arguments() {
        let r = parse_tool_response(&raw(Dialect::JsonTool, r#"{"fact_0":true,"extra":"x"}"#), &spec(2, ResponseDomain::TF, false));
        assert_eq!(r.failures[0].reason, FailureReason::NonStringValue);
        assert_eq!(r.failures[1].reason, FailureReason::MissingArgument);
        assert!(r.is_consistent());
    }

    #[test]
    fn malformed_body_fails_every_fact() {
        for body in ["{\"fact_0\": \"True\"", "[\"True\"]", "The answer is True."] {
            let r = parse_tool_response(&raw(Dialect::JsonTool, body), &spec(3, ResponseDomain::TF, false));
            assert_eq!(r.not_answered(), 3, "{body}");
            assert!(r
                .failures
                .iter()
                .all(|f| matches!(f.reason, FailureReason::WholeResponseUnparseable { .. })));
        }
    }

    #[test]
    fn xml_invoke_inside_prose() {
        let body = "I will call the function.\n<function_calls>\n<invoke>\n<tool_name>FactChecker</tool_name>\n<parameters>\n<fact_0>True</fact_0>\n<fact_1> False </fact_1>\n<fact_2></fact_2>\n</parameters>\n</invoke>\n</function_calls>";
        let r = parse_tool_response(&raw(Dialect::XmlTool, body), &spec(3, ResponseDomain::TF, false));
        assert_eq!(r.verdicts[&0], Verdict::True);
        assert_eq!(r.verdicts[&1], Verdict::False);
        assert_eq!(r.failures, vec![FactFailure { fact_index: 2, reason: FailureReason::NullVerdict }]);
    }

    #[test]
    fn xml_wrong_tool_or_missing_block() {
        let s = spec(1, ResponseDomain::TF, false);
        let wrong = "<invoke><tool_name>Other</tool_name><parameters><fact_0>True</fact_0></parameters></invoke>";
        assert_eq!(parse_tool_response(&raw(Dialect::XmlTool, wrong), &s).not_answered(), 1);
        assert_eq!(parse_tool_response(&raw(Dialect::XmlTool, "True"), &s).not_answered(), 1);
        assert_eq!(parse_tool_response(&raw(Dialect::PlainText, "True"), &s).not_answered(), 1);
    }

    #[test]
    fn enum_validation_is_exact() {
        let tf = vec!["True".to_string(), "False".to_string()];
        assert_eq!(validate_enum("False", &tf), Ok("False"));
        assert!(validate_enum("FALSE", &tf).is_err());
        assert!(validate_enum("False ", &tf).is_err());
        let tfn = FormulationConfig::new(ResponseDomain::TFN, false).enum_domain();
        assert!(validate_enum(DEFAULT_NOT_CLEAR_LABEL, &tfn).is_ok());
    }

    #[test]
    fn prompt_word_match() {
        assert_eq!(parse_prompt_response("True"), Verdict::True);
        assert_eq!(parse_prompt_response("FALSE."), Verdict::False);
        assert_eq!(
            parse_prompt_response("To determine if the claim is true or false based on the given passage, we..."),
            Verdict::True
        );
        assert_eq!(parse_prompt_response("I cannot assess this."), Verdict::NotAnswered);
        assert_eq!(parse_prompt_response("That is untrue."), Verdict::NotAnswered);
        assert_eq!(parse_prompt_response("It's false, not true"), Verdict::False);
    }
}
