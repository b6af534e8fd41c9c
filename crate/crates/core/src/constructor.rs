//! Builds the fact-checking function object from a fact list and serializes
//! it into the tool-description dialect a backend expects.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::model::{
    check_fact_indices, FactStatement, FormulationConfig, ModelError, VerdictMapping,
    ENUM_INSTRUCTION, FACT_PLACEHOLDER,
};
use crate::xml::{self, Element};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConstructorError {
    #[error("cannot build a function object from an empty fact set")]
    EmptyFactSet,
    #[error("duplicate fact index {0}")]
    DuplicateIndex(usize),
    #[error("invalid fact set: {0}")]
    InvalidFacts(ModelError),
    #[error("invalid formulation: {0}")]
    InvalidConfig(ModelError),
    #[error("dialect {0} cannot carry a tool description")]
    UnsupportedDialect(Dialect),
    #[error("enum value {0:?} cannot be written in the XML dialect")]
    EnumNotRepresentable(String),
    #[error("malformed tool description: {0}")]
    MalformedSchema(String),
}

/// Wire format of a tool description or a model response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    JsonTool,
    XmlTool,
    PlainText,
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dialect::JsonTool => "json_tool",
            Dialect::XmlTool => "xml_tool",
            Dialect::PlainText => "plain_text",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgRole {
    Verdict,
    Citation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDomain {
    Enum(Vec<String>),
    /// Free text, or null/empty when nothing applies.
    NullableString,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentSpec {
    pub name: String,
    pub fact_index: usize,
    pub role: ArgRole,
    pub description: String,
    pub domain: ValueDomain,
}

/// The constructed function object: one verdict slot per fact, optionally
/// preceded by a citation slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactFunctionSpec {
    pub title: String,
    pub arguments: Vec<ArgumentSpec>,
    pub required: Vec<String>,
    pub post_mapping: VerdictMapping,
}

impl FactFunctionSpec {
    pub fn fact_count(&self) -> usize {
        self.verdict_args().count()
    }

    pub fn verdict_args(&self) -> impl Iterator<Item = &ArgumentSpec> {
        self.arguments.iter().filter(|a| a.role == ArgRole::Verdict)
    }

    pub fn citation_args(&self) -> impl Iterator<Item = &ArgumentSpec> {
        self.arguments.iter().filter(|a| a.role == ArgRole::Citation)
    }

    pub fn argument(&self, name: &str) -> Option<&ArgumentSpec> {
        self.arguments.iter().find(|a| a.name == name)
    }
}

/// Substitutes the fact into a template. A sentence-final period on the fact
/// absorbs a period directly following the placeholder.
fn fill(template: &str, fact: &str) -> String {
    let fact = fact.trim();
    let (before, after) = template
        .split_once(FACT_PLACEHOLDER)
        .unwrap_or((template, ""));
    let after = if ends_sentence(fact) {
        after.strip_prefix('.').unwrap_or(after)
    } else {
        after
    };
    format!("{before}{fact}{after}")
}

fn ends_sentence(s: &str) -> bool {
    s.ends_with(['.', '!', '?'])
}

fn verdict_description(template: &str, fact: &str) -> String {
    let mut text = fill(template, fact);
    if !ends_sentence(text.trim_end()) {
        text.push('.');
    }
    format!("{} {ENUM_INSTRUCTION}", text.trim_end())
}

pub fn build_fact_function(
    facts: &[FactStatement],
    config: &FormulationConfig,
) -> Result<FactFunctionSpec, ConstructorError> {
    if facts.is_empty() {
        return Err(ConstructorError::EmptyFactSet);
    }
    config.validate().map_err(ConstructorError::InvalidConfig)?;
    check_fact_indices(facts).map_err(|e| match e {
        ModelError::DuplicateIndex(i) => ConstructorError::DuplicateIndex(i),
        other => ConstructorError::InvalidFacts(other),
    })?;
    if facts.len() > config.fact_warning_threshold {
        log::warn!(
            "function object carries {} facts (threshold {}); the request may not fit the model context",
            facts.len(),
            config.fact_warning_threshold
        );
    }

    let domain = config.enum_domain();
    let mut arguments = Vec::with_capacity(facts.len() * 2);
    for fact in facts {
        if config.with_citation {
            arguments.push(ArgumentSpec {
                name: fact.citation_arg(),
                fact_index: fact.index,
                role: ArgRole::Citation,
                description: fill(&config.citation_template, &fact.text),
                domain: ValueDomain::NullableString,
            });
        }
        arguments.push(ArgumentSpec {
            name: fact.verdict_arg(),
            fact_index: fact.index,
            role: ArgRole::Verdict,
            description: verdict_description(&config.description_template, &fact.text),
            domain: ValueDomain::Enum(domain.clone()),
        });
    }

    let mut required: Vec<String> = facts.iter().map(FactStatement::verdict_arg).collect();
    if config.with_citation {
        required.extend(facts.iter().map(FactStatement::citation_arg));
    }

    Ok(FactFunctionSpec {
        title: config.function_title.clone(),
        arguments,
        required,
        post_mapping: config.mapping,
    })
}

/// A serialized tool description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireSchema {
    pub dialect: Dialect,
    pub payload: String,
}

pub fn serialize_spec(spec: &FactFunctionSpec, dialect: Dialect) -> Result<WireSchema, ConstructorError> {
    let payload = match dialect {
        Dialect::JsonTool => json_payload(spec).to_string(),
        Dialect::XmlTool => xml_payload(spec)?,
        Dialect::PlainText => return Err(ConstructorError::UnsupportedDialect(dialect)),
    };
    Ok(WireSchema { dialect, payload })
}

/// JSON-Schema style object; keys in alphabetical order, properties in argument order.
pub fn json_payload(spec: &FactFunctionSpec) -> Value {
    let mut properties = Map::new();
    for arg in &spec.arguments {
        let mut prop = Map::new();
        prop.insert("description".into(), Value::String(arg.description.clone()));
        if let ValueDomain::Enum(values) = &arg.domain {
            prop.insert("enum".into(), json!(values));
        }
        prop.insert("type".into(), Value::String("string".into()));
        properties.insert(arg.name.clone(), Value::Object(prop));
    }
    let mut root = Map::new();
    root.insert("properties".into(), Value::Object(properties));
    root.insert("required".into(), json!(spec.required));
    root.insert("title".into(), Value::String(spec.title.clone()));
    root.insert("type".into(), Value::String("object".into()));
    Value::Object(root)
}

const ENUM_SEPARATOR: &str = ", ";

fn xml_payload(spec: &FactFunctionSpec) -> Result<String, ConstructorError> {
    let mut root = Element::new("tool_description");
    root.push(Element::with_text("tool_name", &spec.title));
    let mut params = Element::new("parameters");
    for arg in &spec.arguments {
        let mut p = Element::new("parameter");
        p.push(Element::with_text("name", &arg.name));
        p.push(Element::with_text("type", "string"));
        p.push(Element::with_text("description", &arg.description));
        if let ValueDomain::Enum(values) = &arg.domain {
            if let Some(bad) = values
                .iter()
                .find(|v| v.contains(',') || v.trim() != v.as_str() || v.is_empty())
            {
                return Err(ConstructorError::EnumNotRepresentable(bad.clone()));
            }
            p.push(Element::with_text("enum", values.join(ENUM_SEPARATOR)));
        }
        params.push(p);
    }
    root.push(params);
    Ok(root.to_xml_string())
}

/// Dialect-neutral view of a tool description, read back from its payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaTree {
    pub title: String,
    pub parameters: Vec<SchemaParam>,
    pub required: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaParam {
    pub name: String,
    pub description: String,
    pub enum_values: Option<Vec<String>>,
}

impl SchemaTree {
    pub fn param(&self, name: &str) -> Option<&SchemaParam> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Reads a payload back into a [`SchemaTree`]. In the XML dialect every
/// parameter is required, in document order.
pub fn parse_schema(schema: &WireSchema) -> Result<SchemaTree, ConstructorError> {
    let malformed = |m: String| ConstructorError::MalformedSchema(m);
    match schema.dialect {
        Dialect::JsonTool => {
            let root: Value = serde_json::from_str(&schema.payload).map_err(|e| malformed(e.to_string()))?;
            let title = root["title"].as_str().ok_or_else(|| malformed("missing title".into()))?;
            if root["type"] != "object" {
                return Err(malformed("root type must be \"object\"".into()));
            }
            let props = root["properties"]
                .as_object()
                .ok_or_else(|| malformed("missing properties".into()))?;
            let mut parameters = Vec::with_capacity(props.len());
            for (name, prop) in props {
                let description = prop["description"]
                    .as_str()
                    .ok_or_else(|| malformed(format!("{name}: missing description")))?;
                let enum_values = match prop.get("enum") {
                    None => None,
                    Some(Value::Array(items)) => Some(
                        items
                            .iter()
                            .map(|v| v.as_str().map(str::to_string))
                            .collect::<Option<Vec<_>>>()
                            .ok_or_else(|| malformed(format!("{name}: non-string enum member")))?,
                    ),
                    Some(_) => return Err(malformed(format!("{name}: enum must be an array"))),
                };
                parameters.push(SchemaParam {
                    name: name.clone(),
                    description: description.to_string(),
                    enum_values,
                });
            }
            let required = root["required"]
                .as_array()
                .ok_or_else(|| malformed("missing required".into()))?
                .iter()
                .map(|v| v.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| malformed("non-string entry in required".into()))?;
            Ok(SchemaTree {
                title: title.to_string(),
                parameters,
                required,
            })
        }
        Dialect::XmlTool => {
            let root = xml::parse(&schema.payload).map_err(|e| malformed(e.to_string()))?;
            if root.name != "tool_description" {
                return Err(malformed(format!("unexpected root <{}>", root.name)));
            }
            let title = root
                .child("tool_name")
                .ok_or_else(|| malformed("missing tool_name".into()))?
                .text();
            let params = root
                .child("parameters")
                .ok_or_else(|| malformed("missing parameters".into()))?;
            let mut parameters = Vec::new();
            for p in params.elements().filter(|e| e.name == "parameter") {
                let field = |n: &str| {
                    p.child(n)
                        .map(Element::text)
                        .ok_or_else(|| malformed(format!("parameter missing <{n}>")))
                };
                parameters.push(SchemaParam {
                    name: field("name")?,
                    description: field("description")?,
                    enum_values: p
                        .child("enum")
                        .map(|e| e.text().split(',').map(|v| v.trim().to_string()).collect()),
                });
            }
            let required = parameters.iter().map(|p| p.name.clone()).collect();
            Ok(SchemaTree {
                title,
                parameters,
                required,
            })
        }
        Dialect::PlainText => Err(ConstructorError::UnsupportedDialect(Dialect::PlainText)),
    }
}
