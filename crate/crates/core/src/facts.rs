//! Derives fact statements from a question and its ground-truth answer.

use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, ModelRequest, RequestMode};
use crate::model::{index_facts, FactStatement, ModelError};
use crate::prompts;

#[derive(Debug, Error)]
pub enum FactGenError {
    #[error("question and passage must both be non-empty")]
    InvalidRequest,
    #[error("the generator returned no dash-prefixed facts")]
    GenerationEmpty,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactGenRequest {
    pub question: String,
    pub passage: String,
}

/// Lines starting with `-` (after trimming) become facts, in order, with the
/// dash and surrounding whitespace removed. Everything else is ignored.
pub fn parse_dash_list(body: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in body.lines() {
        let line = line.trim();
        match line.strip_prefix('-') {
            Some(rest) => out.push(rest.trim().to_string()),
            None if !line.is_empty() => log::debug!("ignoring non-fact line: {line:?}"),
            None => {}
        }
    }
    out
}

pub fn generate_facts(req: &FactGenRequest, gateway: &Gateway) -> Result<Vec<FactStatement>, FactGenError> {
    if req.question.trim().is_empty() || req.passage.trim().is_empty() {
        return Err(FactGenError::InvalidRequest);
    }
    let request = ModelRequest::prompt(
        &gateway.descriptor().model_id,
        gateway.system_prompt(RequestMode::Prompt),
        prompts::fact_generation_prompt(&req.passage, &req.question),
        gateway.descriptor().max_output_tokens,
    );
    let raw = gateway.complete(&request)?;
    // A bare "-" line yields an empty fact; drop those rather than fail.
    let facts: Vec<String> = parse_dash_list(&raw.body)
        .into_iter()
        .filter(|f| !f.is_empty())
        .collect();
    if facts.is_empty() {
        return Err(FactGenError::GenerationEmpty);
    }
    Ok(index_facts(facts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendDescriptor, ScriptEntry, ScriptedBackend};
    use std::sync::Arc;

    #[test]
    fn dash_list_rules() {
        assert_eq!(parse_dash_list("- X\n- Y"), ["X", "Y"]);
        assert_eq!(parse_dash_list("Here are facts:\n- X\n\nnotes"), ["X"]);
        // "-X" -> "X"; " - Y " trims to "- Y" -> "Y".
        assert_eq!(parse_dash_list("-X\n - Y "), ["X", "Y"]);
        assert_eq!(parse_dash_list("1. numbered\n* star\n  - nested"), ["nested"]);
        assert!(parse_dash_list("").is_empty());
    }

    fn scripted(bodies: &[&str]) -> Gateway {
        let backend = ScriptedBackend::new(bodies.iter().map(|b| ScriptEntry::body(*b)));
        Gateway::new(BackendDescriptor::mock_scripted("unused"), Arc::new(backend))
    }

    #[test]
    fn generates_indexed_facts() {
        let gw = scripted(&["- A.\n- B."]);
        let req = FactGenRequest {
            question: "Q?".into(),
            passage: "P.".into(),
        };
        let facts = generate_facts(&req, &gw).unwrap();
        assert_eq!(facts, index_facts(["A.", "B."]).unwrap());
    }

    #[test]
    fn duplicate_facts_are_kept() {
        let gw = scripted(&["- A.\n- A."]);
        let req = FactGenRequest {
            question: "Q?".into(),
            passage: "P.".into(),
        };
        assert_eq!(generate_facts(&req, &gw).unwrap().len(), 2);
    }

    #[test]
    fn empty_generation_is_an_error() {
        let gw = scripted(&["Sorry, nothing to list."]);
        let req = FactGenRequest {
            question: "Q?".into(),
            passage: "P.".into(),
        };
        assert!(matches!(generate_facts(&req, &gw), Err(FactGenError::GenerationEmpty)));
        let blank = FactGenRequest {
            question: " ".into(),
            passage: "P.".into(),
        };
        assert!(matches!(generate_facts(&blank, &gw), Err(FactGenError::InvalidRequest)));
    }
}
