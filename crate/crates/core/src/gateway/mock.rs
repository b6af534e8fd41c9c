//! Offline backends: a gold-label oracle, fixture playback and an
//! adversarial responder that reproduces known formatting failures.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Backend, BackendReply, GatewayError, ModelRequest, RequestMode};
use crate::constructor::{parse_schema, Dialect, SchemaTree};
use crate::model::{Label, QARecord};
use crate::prompts;
use crate::xml::Element;

/// Reply to every prompt-mode request from [`AdversarialBackend`].
pub const ADVERSARIAL_PROMPT_REPLY: &str =
    "To determine if the claim is true or false based on the given passage, the answer is False.";

const ORACLE_UNKNOWN_REPLY: &str = "I cannot assess this claim.";

/// A value to place in one tool argument.
enum Slot {
    Text(String),
    Null,
}

fn render_arguments(dialect: Dialect, title: &str, args: Vec<(String, Slot)>) -> String {
    match dialect {
        Dialect::XmlTool => {
            let mut params = Element::new("parameters");
            for (name, slot) in args {
                params.push(match slot {
                    Slot::Text(t) => Element::with_text(name, t),
                    Slot::Null => Element::new(name),
                });
            }
            let mut invoke = Element::new("invoke");
            invoke.push(Element::with_text("tool_name", title));
            invoke.push(params);
            let mut calls = Element::new("function_calls");
            calls.push(invoke);
            calls.to_xml_string()
        }
        _ => {
            let map: Map<String, Value> = args
                .into_iter()
                .map(|(name, slot)| {
                    let v = match slot {
                        Slot::Text(t) => Value::String(t),
                        Slot::Null => Value::Null,
                    };
                    (name, v)
                })
                .collect();
            Value::Object(map).to_string()
        }
    }
}

fn request_schema(request: &ModelRequest) -> Result<SchemaTree, GatewayError> {
    let schema = request
        .tool_schema
        .as_ref()
        .ok_or_else(|| GatewayError::InvalidRequest("tool call without schema".into()))?;
    parse_schema(schema).map_err(|e| GatewayError::InvalidRequest(e.to_string()))
}

fn is_verdict_param(name: &str) -> bool {
    name.starts_with("fact_")
}

fn first_sentence(passage: &str) -> String {
    let end = passage
        .char_indices()
        .find(|&(i, c)| {
            matches!(c, '.' | '!' | '?')
                && passage[i + c.len_utf8()..]
                    .chars()
                    .next()
                    .is_none_or(char::is_whitespace)
        })
        .map_or(passage.len(), |(i, c)| i + c.len_utf8());
    passage[..end].trim().to_string()
}

/// Answers from human gold labels. Facts are recognised by their text inside
/// argument descriptions or the baseline prompt; anything it does not know is
/// left unanswered.
pub struct OracleBackend {
    dialect: Dialect,
    labels: HashMap<String, HashMap<String, Label>>,
    facts_by_source: HashMap<(String, String), Vec<String>>,
}

impl OracleBackend {
    pub fn new(records: &[QARecord], dialect: Dialect) -> Self {
        let mut labels: HashMap<String, HashMap<String, Label>> = HashMap::new();
        let mut facts_by_source = HashMap::new();
        for rec in records {
            for (&kind, text) in &rec.answers {
                let entry = labels.entry(text.clone()).or_default();
                for fact in &rec.facts {
                    if let Some(&label) = rec.gold_labels.get(&(kind, fact.index)) {
                        entry.insert(fact.text.clone(), label);
                    }
                }
            }
            if let Some(gt) = rec.answer(crate::model::AnswerKind::GroundTruth) {
                facts_by_source.insert(
                    (gt.to_string(), rec.question.clone()),
                    rec.facts.iter().map(|f| f.text.clone()).collect(),
                );
            }
        }
        Self {
            dialect,
            labels,
            facts_by_source,
        }
    }

    fn lookup<'a>(&'a self, passage: &str, haystack: &str) -> Option<Label> {
        self.labels
            .get(passage)?
            .iter()
            .filter(|(fact, _)| haystack.contains(fact.trim()))
            .max_by_key(|(fact, _)| fact.len())
            .map(|(_, &label)| label)
    }

    fn tool_reply(&self, request: &ModelRequest) -> Result<String, GatewayError> {
        let tree = request_schema(request)?;
        let passage = prompts::parse_faaf_prompt(&request.user_prompt).unwrap_or(&request.user_prompt);
        let mut args = Vec::new();
        for param in &tree.parameters {
            let Some(label) = self.lookup(passage, &param.description) else {
                continue;
            };
            let slot = if is_verdict_param(&param.name) {
                Slot::Text(match label {
                    Label::True => "True".into(),
                    Label::False => "False".into(),
                })
            } else if label == Label::True {
                Slot::Text(first_sentence(passage))
            } else {
                Slot::Null
            };
            args.push((param.name.clone(), slot));
        }
        Ok(render_arguments(self.dialect, &tree.title, args))
    }

    fn prompt_reply(&self, request: &ModelRequest) -> String {
        if let Some((passage, question)) = prompts::parse_fact_generation_prompt(&request.user_prompt) {
            return match self.facts_by_source.get(&(passage.to_string(), question.to_string())) {
                Some(facts) => facts.iter().map(|f| format!("- {f}")).collect::<Vec<_>>().join("\n"),
                None => "No facts can be derived.".to_string(),
            };
        }
        let Some((passage, fact)) = prompts::parse_prompt_baseline(&request.user_prompt) else {
            return ORACLE_UNKNOWN_REPLY.to_string();
        };
        match self.lookup(passage, fact) {
            Some(Label::True) => "True".into(),
            Some(Label::False) => "False".into(),
            None => ORACLE_UNKNOWN_REPLY.into(),
        }
    }
}

impl Backend for OracleBackend {
    fn call(&self, request: &ModelRequest) -> Result<BackendReply, GatewayError> {
        let body = match request.mode {
            RequestMode::ToolCall => self.tool_reply(request)?,
            RequestMode::Prompt => self.prompt_reply(request),
        };
        Ok(BackendReply {
            body,
            prompt_tokens: None,
            completion_tokens: None,
        })
    }
}

/// One recorded response. Entries carrying a request fingerprint answer that
/// request every time; the rest are handed out in file order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_fingerprint: Option<String>,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

impl ScriptEntry {
    pub fn body(body: impl Into<String>) -> Self {
        Self {
            request_fingerprint: None,
            body: body.into(),
            prompt_tokens: None,
            completion_tokens: None,
        }
    }
}

/// Fixture playback, one JSON object per line.
pub struct ScriptedBackend {
    keyed: HashMap<String, ScriptEntry>,
    queue: Mutex<VecDeque<ScriptEntry>>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut keyed = HashMap::new();
        let mut queue = VecDeque::new();
        for e in entries {
            match &e.request_fingerprint {
                Some(fp) => {
                    keyed.insert(fp.clone(), e);
                }
                None => queue.push_back(e),
            }
        }
        Self {
            keyed,
            queue: Mutex::new(queue),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(line)
                .map_err(|e| GatewayError::Fixture(format!("{}:{}: {e}", path.display(), n + 1)))?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl Backend for ScriptedBackend {
    fn call(&self, request: &ModelRequest) -> Result<BackendReply, GatewayError> {
        let entry = match self.keyed.get(&request.fingerprint()) {
            Some(e) => e.clone(),
            None => self
                .queue
                .lock()
                .unwrap()
                .pop_front()
                .ok_or_else(|| GatewayError::Fixture("script exhausted".into()))?,
        };
        Ok(BackendReply {
            body: entry.body,
            prompt_tokens: entry.prompt_tokens,
            completion_tokens: entry.completion_tokens,
        })
    }
}

/// Reproduces the failure modes that strict parsing must survive: verbose
/// prose mentioning both verdict words, null verdicts next to null
/// citations, and wrongly cased enum values.
pub struct AdversarialBackend {
    dialect: Dialect,
}

impl AdversarialBackend {
    pub fn new(dialect: Dialect) -> Self {
        Self { dialect }
    }
}

impl Backend for AdversarialBackend {
    fn call(&self, request: &ModelRequest) -> Result<BackendReply, GatewayError> {
        let body = match request.mode {
            RequestMode::Prompt => ADVERSARIAL_PROMPT_REPLY.to_string(),
            RequestMode::ToolCall => {
                let tree = request_schema(request)?;
                let mut args = Vec::new();
                let mut k = 0usize;
                for param in &tree.parameters {
                    if is_verdict_param(&param.name) {
                        let slot = match k % 3 {
                            0 => Slot::Null,
                            1 => Slot::Text("true".into()),
                            _ => Slot::Text("False".into()),
                        };
                        args.push((param.name.clone(), slot));
                        k += 1;
                    } else {
                        args.push((param.name.clone(), Slot::Null));
                    }
                }
                render_arguments(self.dialect, &tree.title, args)
            }
        };
        Ok(BackendReply {
            body,
            prompt_tokens: None,
            completion_tokens: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructor::{build_fact_function, serialize_spec};
    use crate::model::{index_facts, AnswerKind, FormulationConfig, ResponseDomain};
    use std::collections::BTreeMap;

    fn record() -> QARecord {
        let facts = index_facts(["Alpha is first.", "Beta is second."]).unwrap();
        let mut answers = BTreeMap::new();
        answers.insert(AnswerKind::GroundTruth, "Alpha is first. Beta is second.".to_string());
        answers.insert(AnswerKind::Poor, "Alpha is first.".to_string());
        let mut gold_labels = BTreeMap::new();
        gold_labels.insert((AnswerKind::GroundTruth, 0), Label::True);
        gold_labels.insert((AnswerKind::GroundTruth, 1), Label::True);
        gold_labels.insert((AnswerKind::Poor, 0), Label::True);
        gold_labels.insert((AnswerKind::Poor, 1), Label::False);
        QARecord {
            id: "r".into(),
            question: "What?".into(),
            answers,
            facts,
            gold_labels,
        }
    }

    fn tool_request(dialect: Dialect, citation: bool, passage: &str) -> ModelRequest {
        let rec = record();
        let spec = build_fact_function(&rec.facts, &FormulationConfig::new(ResponseDomain::TF, citation)).unwrap();
        ModelRequest::tool_call(
            "m",
            String::new(),
            prompts::faaf_prompt(passage),
            serialize_spec(&spec, dialect).unwrap(),
            64,
        )
    }

    #[test]
    fn oracle_answers_tool_calls_from_gold() {
        let oracle = OracleBackend::new(&[record()], Dialect::JsonTool);
        let reply = oracle.call(&tool_request(Dialect::JsonTool, false, "Alpha is first.")).unwrap();
        assert_eq!(reply.body, r#"{"fact_0":"True","fact_1":"False"}"#);
        let reply = oracle.call(&tool_request(Dialect::JsonTool, true, "Alpha is first.")).unwrap();
        assert_eq!(
            reply.body,
            r#"{"citation_0":"Alpha is first.","fact_0":"True","citation_1":null,"fact_1":"False"}"#
        );
    }

    #[test]
    fn oracle_xml_reply() {
        let oracle = OracleBackend::new(&[record()], Dialect::XmlTool);
        let reply = oracle.call(&tool_request(Dialect::XmlTool, false, "Alpha is first.")).unwrap();
        crate::xml::parse(&reply.body).unwrap();
        assert!(reply.body.contains("<fact_1>False</fact_1>"));
        assert!(reply.body.contains("<tool_name>FactChecker</tool_name>"));
    }

    #[test]
    fn oracle_prompt_and_generation() {
        let oracle = OracleBackend::new(&[record()], Dialect::JsonTool);
        let ask = |p: String| oracle.call(&ModelRequest::prompt("m", String::new(), p, 8)).unwrap().body;
        assert_eq!(ask(prompts::prompt_baseline("Alpha is first.", "Beta is second.")), "False");
        assert_eq!(ask(prompts::prompt_baseline("Unknown.", "Beta is second.")), ORACLE_UNKNOWN_REPLY);
        assert_eq!(
            ask(prompts::fact_generation_prompt("Alpha is first. Beta is second.", "What?")),
            "- Alpha is first.\n- Beta is second."
        );
    }

    #[test]
    fn scripted_replays_bytes_in_order_and_by_fingerprint() {
        let req = ModelRequest::prompt("m", String::new(), "keyed".into(), 8);
        let mut keyed = ScriptEntry::body("keyed \u{00e9}\r\n body");
        keyed.request_fingerprint = Some(req.fingerprint());
        let backend = ScriptedBackend::new([ScriptEntry::body("one"), keyed, ScriptEntry::body("two")]);
        let other = ModelRequest::prompt("m", String::new(), "x".into(), 8);
        assert_eq!(backend.call(&req).unwrap().body, "keyed \u{00e9}\r\n body");
        assert_eq!(backend.call(&other).unwrap().body, "one");
        assert_eq!(backend.call(&req).unwrap().body, "keyed \u{00e9}\r\n body");
        assert_eq!(backend.call(&other).unwrap().body, "two");
        assert!(matches!(backend.call(&other), Err(GatewayError::Fixture(_))));
    }

    #[test]
    fn adversarial_replies() {
        let adv = AdversarialBackend::new(Dialect::JsonTool);
        let prompt = ModelRequest::prompt("m", String::new(), "anything".into(), 8);
        assert_eq!(adv.call(&prompt).unwrap().body, ADVERSARIAL_PROMPT_REPLY);
        let body = adv.call(&tool_request(Dialect::JsonTool, true, "x")).unwrap().body;
        assert_eq!(body, r#"{"citation_0":null,"fact_0":null,"citation_1":null,"fact_1":"true"}"#);
    }

    #[test]
    fn first_sentence_split() {
        assert_eq!(first_sentence("Dr. Who. Next"), "Dr.");
        assert_eq!(first_sentence("Version 1.5 is out. Next"), "Version 1.5 is out.");
        assert_eq!(first_sentence("No terminator"), "No terminator");
    }
}
