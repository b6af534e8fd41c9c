//! Live chat-completion backends.
//!
//! `OpenAiJsonBackend` sends the function object as a JSON tool and forces
//! the model to call it; the body handed back is the tool-call argument
//! string. `AnthropicXmlBackend` embeds the XML tool description in the
//! system prompt and returns the model's text, which carries an `<invoke>`
//! block.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{Backend, BackendDescriptor, BackendReply, GatewayError, ModelRequest, RequestMode};

pub const OPENAI_DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const ANTHROPIC_DEFAULT_ENDPOINT: &str = "https://api.anthropic.com/v1/messages";
const ANTHROPIC_VERSION: &str = "2023-06-01";
const XML_STOP_SEQUENCE: &str = "</function_calls>";

fn client(timeout_secs: u64) -> Result<Client, GatewayError> {
    Client::builder()
        .timeout(Duration::from_secs(timeout_secs))
        .build()
        .map_err(|e| GatewayError::transport(e.to_string(), false))
}

fn api_key(env_name: &str) -> Result<String, GatewayError> {
    std::env::var(env_name)
        .ok()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| GatewayError::Auth(format!("environment variable {env_name} is not set")))
}

fn classify_status(status: StatusCode, body: &str) -> GatewayError {
    let snippet: String = body.chars().take(300).collect();
    match status.as_u16() {
        401 | 403 => GatewayError::Auth(format!("HTTP {status}: {snippet}")),
        408 | 409 | 429 => GatewayError::transport(format!("HTTP {status}: {snippet}"), true),
        s if s >= 500 => GatewayError::transport(format!("HTTP {status}: {snippet}"), true),
        _ => GatewayError::transport(format!("HTTP {status}: {snippet}"), false),
    }
}

fn post_json(client: &Client, url: &str, headers: &[(&str, String)], payload: &Value) -> Result<Value, GatewayError> {
    let mut req = client.post(url).json(payload);
    for (k, v) in headers {
        req = req.header(*k, v);
    }
    let resp = req.send().map_err(|e| {
        let retryable = e.is_timeout() || e.is_connect() || e.is_request();
        GatewayError::transport(e.to_string(), retryable)
    })?;
    let status = resp.status();
    let text = resp
        .text()
        .map_err(|e| GatewayError::transport(format!("reading response: {e}"), true))?;
    if !status.is_success() {
        return Err(classify_status(status, &text));
    }
    serde_json::from_str(&text).map_err(|e| GatewayError::transport(format!("response is not JSON: {e}"), false))
}

pub struct OpenAiJsonBackend {
    endpoint: String,
    api_key_env: String,
    client: Client,
}

impl OpenAiJsonBackend {
    pub fn new(descriptor: &BackendDescriptor) -> Result<Self, GatewayError> {
        Ok(Self {
            endpoint: descriptor
                .endpoint
                .clone()
                .unwrap_or_else(|| OPENAI_DEFAULT_ENDPOINT.to_string()),
            api_key_env: descriptor
                .api_key_env
                .clone()
                .unwrap_or_else(|| "OPENAI_API_KEY".into()),
            client: client(descriptor.timeout_secs)?,
        })
    }

    /// Request body for the chat-completions endpoint.
    pub fn payload(request: &ModelRequest) -> Result<Value, GatewayError> {
        let mut messages = Vec::new();
        if !request.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_prompt}));
        }
        messages.push(json!({"role": "user", "content": request.user_prompt}));
        let mut payload = json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        if let (RequestMode::ToolCall, Some(schema)) = (request.mode, &request.tool_schema) {
            let parameters: Value = serde_json::from_str(&schema.payload)
                .map_err(|e| GatewayError::InvalidRequest(format!("tool schema is not JSON: {e}")))?;
            let name = parameters["title"].as_str().unwrap_or("FactChecker").to_string();
            payload["tools"] = json!([{
                "type": "function",
                "function": {
                    "name": name,
                    "description": "Assign a verification value to every fact argument.",
                    "parameters": parameters,
                }
            }]);
            payload["tool_choice"] = json!({"type": "function", "function": {"name": name}});
        }
        Ok(payload)
    }

    /// Extracts the body and usage from a chat-completions response.
    pub fn reply(response: &Value, mode: RequestMode) -> Result<BackendReply, GatewayError> {
        let message = &response["choices"][0]["message"];
        if message.is_null() {
            return Err(GatewayError::transport("response has no choices", false));
        }
        let body = match mode {
            RequestMode::ToolCall => message["tool_calls"][0]["function"]["arguments"]
                .as_str()
                .or_else(|| message["content"].as_str())
                .unwrap_or_default()
                .to_string(),
            RequestMode::Prompt => message["content"].as_str().unwrap_or_default().to_string(),
        };
        Ok(BackendReply {
            body,
            prompt_tokens: response["usage"]["prompt_tokens"].as_u64(),
            completion_tokens: response["usage"]["completion_tokens"].as_u64(),
        })
    }
}

impl Backend for OpenAiJsonBackend {
    fn call(&self, request: &ModelRequest) -> Result<BackendReply, GatewayError> {
        let key = api_key(&self.api_key_env)?;
        let payload = Self::payload(request)?;
        let response = post_json(
            &self.client,
            &self.endpoint,
            &[("Authorization", format!("Bearer {key}"))],
            &payload,
        )?;
        Self::reply(&response, request.mode)
    }
}

pub struct AnthropicXmlBackend {
    endpoint: String,
    api_key_env: String,
    client: Client,
}

impl AnthropicXmlBackend {
    pub fn new(descriptor: &BackendDescriptor) -> Result<Self, GatewayError> {
        Ok(Self {
            endpoint: descriptor
                .endpoint
                .clone()
                .unwrap_or_else(|| ANTHROPIC_DEFAULT_ENDPOINT.to_string()),
            api_key_env: descriptor
                .api_key_env
                .clone()
                .unwrap_or_else(|| "ANTHROPIC_API_KEY".into()),
            client: client(descriptor.timeout_secs)?,
        })
    }

    pub fn payload(request: &ModelRequest) -> Value {
        let mut system = request.system_prompt.clone();
        let mut payload = json!({
            "model": request.model_id,
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.user_prompt}],
        });
        if let (RequestMode::ToolCall, Some(schema)) = (request.mode, &request.tool_schema) {
            if !system.is_empty() {
                system.push_str("\n\n");
            }
            system.push_str("Here are the tools available:\n<tools>\n");
            system.push_str(&schema.payload);
            system.push_str("\n</tools>");
            payload["stop_sequences"] = json!([XML_STOP_SEQUENCE]);
        }
        if !system.is_empty() {
            payload["system"] = Value::String(system);
        }
        payload
    }

    pub fn reply(response: &Value) -> Result<BackendReply, GatewayError> {
        let blocks = response["content"]
            .as_array()
            .ok_or_else(|| GatewayError::transport("response has no content", false))?;
        let mut body: String = blocks
            .iter()
            .filter(|b| b["type"] == "text")
            .filter_map(|b| b["text"].as_str())
            .collect();
        if response["stop_reason"] == "stop_sequence" && response["stop_sequence"] == XML_STOP_SEQUENCE {
            body.push_str(XML_STOP_SEQUENCE);
        }
        Ok(BackendReply {
            body,
            prompt_tokens: response["usage"]["input_tokens"].as_u64(),
            completion_tokens: response["usage"]["output_tokens"].as_u64(),
        })
    }
}

impl Backend for AnthropicXmlBackend {
    fn call(&self, request: &ModelRequest) -> Result<BackendReply, GatewayError> {
        let key = api_key(&self.api_key_env)?;
        let response = post_json(
            &self.client,
            &self.endpoint,
            &[("x-api-key", key), ("anthropic-version", ANTHROPIC_VERSION.to_string())],
            &Self::payload(request),
        )?;
        Self::reply(&response)
    }
}
