//! Uniform access to evaluator models.
//!
//! A [`Gateway`] wraps one backend with a content-addressed response cache,
//! a concurrency/rate limiter, a call and token budget, and transport-level
//! retries. Format retries never happen here: one logical request is one
//! upstream attempt as far as the response body is concerned.

mod cache;
mod http;
mod limiter;
mod mock;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constructor::{Dialect, WireSchema};
use crate::parser::RawModelOutput;

pub use cache::{CacheEntry, CacheStats, ResponseCache};
pub use http::{AnthropicXmlBackend, OpenAiJsonBackend};
pub use limiter::{Budget, BudgetSnapshot, Limiter};
pub use mock::{
    AdversarialBackend, OracleBackend, ScriptEntry, ScriptedBackend, ADVERSARIAL_PROMPT_REPLY,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("cache error: {0}")]
    Cache(String),
}

impl GatewayError {
    pub fn transport(message: impl Into<String>, retryable: bool) -> Self {
        GatewayError::Transport {
            message: message.into(),
            retryable,
        }
    }

    /// Errors that make every further call pointless.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            GatewayError::Auth(_) | GatewayError::BudgetExceeded(_) | GatewayError::InvalidRequest(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestMode {
    ToolCall,
    Prompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub mode: RequestMode,
    pub system_prompt: String,
    pub user_prompt: String,
    pub tool_schema: Option<WireSchema>,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ModelRequest {
    pub fn prompt(model_id: &str, system_prompt: String, user_prompt: String, max_output_tokens: u32) -> Self {
        Self {
            mode: RequestMode::Prompt,
            system_prompt,
            user_prompt,
            tool_schema: None,
            model_id: model_id.to_string(),
            temperature: 0.0,
            max_output_tokens,
        }
    }

    pub fn tool_call(
        model_id: &str,
        system_prompt: String,
        user_prompt: String,
        schema: WireSchema,
        max_output_tokens: u32,
    ) -> Self {
        Self {
            mode: RequestMode::ToolCall,
            system_prompt,
            user_prompt,
            tool_schema: Some(schema),
            model_id: model_id.to_string(),
            temperature: 0.0,
            max_output_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match (self.mode, &self.tool_schema) {
            (RequestMode::ToolCall, None) => {
                return Err(GatewayError::InvalidRequest("tool call without a tool schema".into()))
            }
            (RequestMode::Prompt, Some(_)) => {
                return Err(GatewayError::InvalidRequest("prompt request carries a tool schema".into()))
            }
            _ => {}
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest("temperature must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Dialect of the body this request should produce.
    pub fn response_dialect(&self) -> Dialect {
        self.tool_schema
            .as_ref()
            .map_or(Dialect::PlainText, |s| s.dialect)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        hash_json(&serde_json::to_value(self).expect("request serializes"))
    }
}

fn hash_json(value: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

/// Token and call accounting. A single call has `call_count == 1`;
/// `upstream_calls` is 0 when the body came from the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageRecord {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub call_count: u64,
    #[serde(default)]
    pub upstream_calls: u64,
}

impl UsageRecord {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::AddAssign for UsageRecord {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
        self.latency_ms += rhs.latency_ms;
        self.call_count += rhs.call_count;
        self.upstream_calls += rhs.upstream_calls;
    }
}

impl std::iter::Sum for UsageRecord {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |mut acc, u| {
            acc += u;
            acc
        })
    }
}

/// Token estimate used when a backend reports no usage: one token per four
/// characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpJsonTools,
    HttpXmlTools,
    MockOracle,
    MockScripted,
    MockAdversarial,
}

impl BackendKind {
    pub fn is_mock(self) -> bool {
        matches!(
            self,
            BackendKind::MockOracle | BackendKind::MockScripted | BackendKind::MockAdversarial
        )
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::HttpJsonTools => "http_json_tools",
            BackendKind::HttpXmlTools => "http_xml_tools",
            BackendKind::MockOracle => "mock_oracle",
            BackendKind::MockScripted => "mock_scripted",
            BackendKind::MockAdversarial => "mock_adversarial",
        })
    }
}

fn default_max_output_tokens() -> u32 {
    1024
}

fn default_retries() -> u32 {
    3
}

fn default_timeout() -> u64 {
    120
}

fn default_concurrency() -> usize {
    4
}

/// How to reach one backend. Credentials are referenced by environment
/// variable name only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Recorded bodies for `MockScripted`.
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    /// Tool dialect for mock backends; HTTP backends fix their own.
    #[serde(default)]
    pub dialect: Option<Dialect>,
    #[serde(default)]
    pub system_prompt: Option<String>,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_retries")]
    pub transport_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl BackendDescriptor {
    pub fn new(name: impl Into<String>, kind: BackendKind) -> Self {
        Self {
            name: name.into(),
            kind,
            model_id: String::new(),
            endpoint: None,
            api_key_env: None,
            fixture: None,
            dialect: None,
            system_prompt: None,
            max_output_tokens: default_max_output_tokens(),
            requests_per_minute: None,
            max_concurrency: default_concurrency(),
            transport_retries: default_retries(),
            timeout_secs: default_timeout(),
        }
    }

    pub fn mock_oracle() -> Self {
        let mut d = Self::new("mock-oracle", BackendKind::MockOracle);
        d.model_id = "oracle".into();
        d
    }

    pub fn mock_adversarial() -> Self {
        let mut d = Self::new("mock-adversarial", BackendKind::MockAdversarial);
        d.model_id = "adversarial".into();
        d
    }

    pub fn mock_scripted(fixture: impl Into<PathBuf>) -> Self {
        let mut d = Self::new("mock-scripted", BackendKind::MockScripted);
        d.model_id = "scripted".into();
        d.fixture = Some(fixture.into());
        d
    }

    pub fn openai(model_id: &str) -> Self {
        let mut d = Self::new(model_id, BackendKind::HttpJsonTools);
        d.model_id = model_id.into();
        d.api_key_env = Some("OPENAI_API_KEY".into());
        d
    }

    pub fn anthropic(model_id: &str) -> Self {
        let mut d = Self::new(model_id, BackendKind::HttpXmlTools);
        d.model_id = model_id.into();
        d.api_key_env = Some("ANTHROPIC_API_KEY".into());
        d
    }

    pub fn tool_dialect(&self) -> Dialect {
        match self.kind {
            BackendKind::HttpJsonTools => Dialect::JsonTool,
            BackendKind::HttpXmlTools => Dialect::XmlTool,
            _ => self.dialect.unwrap_or(Dialect::JsonTool),
        }
    }

    /// Fields that change what a backend would answer. Credentials and
    /// throughput settings are excluded.
    pub fn identity(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.name,
            "kind": self.kind,
            "model_id": self.model_id,
            "endpoint": self.endpoint,
            "dialect": self.tool_dialect(),
        })
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.name.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("backend name is empty".into()));
        }
        match self.kind {
            BackendKind::HttpJsonTools | BackendKind::HttpXmlTools => {
                if self.model_id.is_empty() {
                    return Err(GatewayError::InvalidRequest(format!("{}: model_id is required", self.name)));
                }
                if self.api_key_env.is_none() {
                    return Err(GatewayError::InvalidRequest(format!(
                        "{}: api_key_env is required for live backends",
                        self.name
                    )));
                }
            }
            BackendKind::MockScripted if self.fixture.is_none() => {
                return Err(GatewayError::InvalidRequest(format!("{}: fixture path is required", self.name)))
            }
            _ => {}
        }
        if self.max_concurrency == 0 {
            return Err(GatewayError::InvalidRequest("max_concurrency must be positive".into()));
        }
        Ok(())
    }
}

const JSON_TOOLS_SYSTEM_PROMPT: &str = "You are a helpful assistant.";

const XML_TOOLS_PROMPT_SYSTEM_PROMPT: &str = "You are a helpful assistant.";

const XML_TOOLS_SYSTEM_PROMPT: &str = "In this environment you have access to a set of tools you can use to answer the user's question.

You call a tool by writing a <function_calls> block. Here is an example that calls a tool named get_weather with two parameters:

<function_calls>
<invoke>
<tool_name>get_weather</tool_name>
<parameters>
<city>Paris</city>
<unit>celsius</unit>
</parameters>
</invoke>
</function_calls>

Write every parameter of the tool as its own element inside <parameters>. When a parameter lists accepted values, respond with exactly one of them, spelled exactly as listed.";

/// System prompt used when a request does not override it.
pub fn default_system_prompt(backend: &BackendDescriptor, mode: RequestMode) -> String {
    if let Some(custom) = &backend.system_prompt {
        return custom.clone();
    }
    match (backend.kind, mode) {
        (BackendKind::HttpJsonTools, _) => JSON_TOOLS_SYSTEM_PROMPT.to_string(),
        (BackendKind::HttpXmlTools, RequestMode::ToolCall) => XML_TOOLS_SYSTEM_PROMPT.to_string(),
        (BackendKind::HttpXmlTools, RequestMode::Prompt) => XML_TOOLS_PROMPT_SYSTEM_PROMPT.to_string(),
        _ => String::new(),
    }
}

/// What a backend hands back for one attempt. Missing token counts are
/// estimated by the gateway.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub body: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

pub trait Backend: Send + Sync {
    fn call(&self, request: &ModelRequest) -> Result<BackendReply, GatewayError>;
}

/// Instantiates the backend a descriptor names. The oracle needs the gold
/// records it answers from.
pub fn connect(
    descriptor: &BackendDescriptor,
    gold: Option<&[crate::model::QARecord]>,
) -> Result<Arc<dyn Backend>, GatewayError> {
    descriptor.validate()?;
    let dialect = descriptor.tool_dialect();
    Ok(match descriptor.kind {
        BackendKind::HttpJsonTools => Arc::new(OpenAiJsonBackend::new(descriptor)?),
        BackendKind::HttpXmlTools => Arc::new(AnthropicXmlBackend::new(descriptor)?),
        BackendKind::MockOracle => {
            let records = gold.ok_or_else(|| {
                GatewayError::InvalidRequest("the oracle backend needs a dataset with gold labels".into())
            })?;
            Arc::new(OracleBackend::new(records, dialect))
        }
        BackendKind::MockScripted => {
            let path = descriptor.fixture.as_deref().expect("validated");
            Arc::new(ScriptedBackend::from_file(path)?)
        }
        BackendKind::MockAdversarial => Arc::new(AdversarialBackend::new(dialect)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// One backend behind cache, limiter, budget and transport retries.
pub struct Gateway {
    descriptor: BackendDescriptor,
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    limiter: Limiter,
    budget: Budget,
    retry: RetryPolicy,
    upstream_calls: AtomicU64,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("descriptor", &self.descriptor)
            .field("upstream_calls", &self.upstream_calls())
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(descriptor: BackendDescriptor, backend: Arc<dyn Backend>) -> Self {
        let limiter = Limiter::new(descriptor.max_concurrency, descriptor.requests_per_minute);
        let retry = RetryPolicy {
            max_retries: descriptor.transport_retries,
            ..RetryPolicy::default()
        };
        Self {
            descriptor,
            backend,
            cache: None,
            limiter,
            budget: Budget::unlimited(),
            retry,
            upstream_calls: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_budget(mut self, budget: Budget) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    pub fn budget(&self) -> &Budget {
        &self.budget
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    /// Requests that reached the backend (cache misses).
    pub fn upstream_calls(&self) -> u64 {
        self.upstream_calls.load(Ordering::SeqCst)
    }

    pub fn system_prompt(&self, mode: RequestMode) -> String {
        default_system_prompt(&self.descriptor, mode)
    }

    pub fn cache_key(&self, request: &ModelRequest) -> String {
        hash_json(&serde_json::json!({
            "backend": self.descriptor.identity(),
            "request": request,
        }))
    }

    pub fn complete(&self, request: &ModelRequest) -> Result<RawModelOutput, GatewayError> {
        request.validate()?;
        let dialect = request.response_dialect();
        if dialect != Dialect::PlainText && dialect != self.descriptor.tool_dialect() {
            return Err(GatewayError::InvalidRequest(format!(
                "backend {} expects {} tool schemas, got {dialect}",
                self.descriptor.name,
                self.descriptor.tool_dialect()
            )));
        }

        let key = self.cache_key(request);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key)? {
                return Ok(RawModelOutput {
                    dialect,
                    body: entry.body,
                    usage: UsageRecord {
                        latency_ms: 0,
                        call_count: 1,
                        upstream_calls: 0,
                        ..entry.usage
                    },
                });
            }
        }

        self.budget.reserve_call()?;
        let _permit = self.limiter.acquire();
        let started = Instant::now();
        let reply = self.call_with_retries(request)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        self.upstream_calls.fetch_add(1, Ordering::SeqCst);

        let prompt_text_len = estimate_tokens(&request.system_prompt)
            + estimate_tokens(&request.user_prompt)
            + request.tool_schema.as_ref().map_or(0, |s| estimate_tokens(&s.payload));
        let usage = UsageRecord {
            prompt_tokens: reply.prompt_tokens.unwrap_or(prompt_text_len),
            completion_tokens: reply.completion_tokens.unwrap_or_else(|| estimate_tokens(&reply.body)),
            latency_ms,
            call_count: 1,
            upstream_calls: 1,
        };
        self.budget.record_tokens(usage.total_tokens());

        if let Some(cache) = &self.cache {
            cache.put(&CacheEntry {
                key,
                backend: self.descriptor.identity(),
                request: request.clone(),
                dialect,
                body: reply.body.clone(),
                usage,
            })?;
        }
        Ok(RawModelOutput {
            dialect,
            body: reply.body,
            usage,
        })
    }

    fn call_with_retries(&self, request: &ModelRequest) -> Result<BackendReply, GatewayError> {
        let mut attempt = 0;
        loop {
            match self.backend.call(request) {
                Err(GatewayError::Transport { message, retryable: true }) if attempt < self.retry.max_retries => {
                    let delay = self.retry.base_delay * 2u32.saturating_pow(attempt);
                    log::warn!(
                        "{}: transport error ({message}); retry {} of {} in {delay:?}",
                        self.descriptor.name,
                        attempt + 1,
                        self.retry.max_retries
                    );
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
