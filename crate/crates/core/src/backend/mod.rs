//! Chat-completion backends: an OpenAI-compatible HTTP client and a
//! deterministic scriptable mock, behind one `chat_complete` call with
//! retries, structured-output enforcement, and media encoding.

mod http;
mod media;
mod mock;
mod schema;

pub use media::{encode_media, encode_media_with_base};
pub use schema::{schema_from_fields, validate_against_schema};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use indexmap::IndexMap;
use serde_json::Value;

use crate::config::Role;
use crate::error::{GraspError, Result};

/// One typed content part of a chat message.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Part {
    Text(String),
    /// Payload is a resolved `data:` URL (or plain URL for remote media).
    ImageUrl(String),
    AudioUrl(String),
}

/// Role-tagged message with ordered multimodal parts.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub parts: Vec<Part>,
    pub tool_call_id: Option<String>,
    /// Set on assistant messages that requested tool invocations.
    pub tool_calls: Vec<ToolCall>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: role.as_str().to_string(),
            parts: vec![Part::Text(text.into())],
            tool_call_id: None,
            tool_calls: Vec::new(),
        }
    }

    pub fn tool_result(tool_call_id: impl Into<String>, content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: "tool".to_string(),
            parts: vec![Part::Text(content.into())],
            tool_call_id: Some(tool_call_id.into()),
            tool_calls: Vec::new(),
        }
    }

    /// Concatenated text parts.
    pub fn text_content(&self) -> String {
        let mut out = String::new();
        for p in &self.parts {
            if let Part::Text(t) = p {
                out.push_str(t);
            }
        }
        out
    }
}

/// Tool signature as sent on the wire.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    /// Raw JSON arguments string as returned by the model.
    pub arguments: String,
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub parameters: IndexMap<String, Value>,
    /// JSON-schema document; present iff structured output is enabled.
    pub response_schema: Option<Value>,
    pub tools: Vec<ToolSpec>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: model.into(),
            messages,
            parameters: IndexMap::new(),
            response_schema: None,
            tools: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub tool_calls: Vec<ToolCall>,
    pub finish_reason: String,
    pub usage: Usage,
    pub latency_ms: u64,
    /// Total request attempts including retries.
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApiStyle {
    OpenaiChat,
    Mock,
}

/// Retry backoff schedule: delays grow by `multiplier` from `initial_ms`,
/// capped at `max_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct Backoff {
    pub initial_ms: u64,
    pub multiplier: f64,
    pub max_ms: u64,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            initial_ms: 200,
            multiplier: 2.0,
            max_ms: 5_000,
        }
    }
}

impl Backoff {
    /// Delay before retry number `retry` (0-based). Non-decreasing, capped.
    pub fn delay_ms(&self, retry: u32) -> u64 {
        let mut d = self.initial_ms as f64;
        for _ in 0..retry {
            d *= self.multiplier.max(1.0);
            if d >= self.max_ms as f64 {
                return self.max_ms;
            }
        }
        (d as u64).min(self.max_ms)
    }
}

/// One scripted mock response step.
#[derive(Debug, Clone, PartialEq)]
pub enum MockStep {
    Text(String),
    /// Simulated transport failure with an HTTP-like status.
    Status(u16),
    ToolCall { name: String, arguments: Value },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MockSpec {
    /// Consumed in order across calls; exhausted scripts repeat the last
    /// step. Empty script means hash-based deterministic responses.
    pub script: Vec<MockStep>,
    pub latency_ms: u64,
    /// Salt folded into hash-based responses so distinct runs can differ.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub name: String,
    pub base_url: String,
    pub api_style: ApiStyle,
    /// Environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub supports_native_schema: bool,
    pub max_retries: u32,
    pub backoff: Backoff,
    pub mock: MockSpec,
    /// Optional per-backend in-flight request cap.
    pub in_flight_cap: Option<usize>,
    pub timeout_ms: u64,
    /// Retries on schema-invalid structured output (default 2).
    pub schema_retries: u32,
}

impl BackendConfig {
    pub fn mock(name: impl Into<String>) -> BackendConfig {
        BackendConfig {
            name: name.into(),
            base_url: String::new(),
            api_style: ApiStyle::Mock,
            auth_env: None,
            supports_native_schema: false,
            max_retries: 2,
            backoff: Backoff {
                initial_ms: 1,
                multiplier: 2.0,
                max_ms: 50,
            },
            mock: MockSpec::default(),
            in_flight_cap: None,
            timeout_ms: 30_000,
            schema_retries: 2,
        }
    }

    pub fn openai_chat(name: impl Into<String>, base_url: impl Into<String>) -> BackendConfig {
        BackendConfig {
            name: name.into(),
            base_url: base_url.into(),
            api_style: ApiStyle::OpenaiChat,
            auth_env: None,
            supports_native_schema: false,
            max_retries: 3,
            backoff: Backoff::default(),
            mock: MockSpec::default(),
            in_flight_cap: Some(32),
            timeout_ms: 120_000,
            schema_retries: 2,
        }
    }

    pub fn with_script(mut self, steps: Vec<MockStep>) -> BackendConfig {
        self.mock.script = steps;
        self
    }

    pub fn with_latency_ms(mut self, ms: u64) -> BackendConfig {
        self.mock.latency_ms = ms;
        self
    }
}

/// A shareable backend instance: config plus per-instance call state.
pub struct Backend {
    pub config: BackendConfig,
    script_cursor: AtomicUsize,
    calls: AtomicUsize,
    in_flight: std::sync::Mutex<usize>,
    in_flight_cv: std::sync::Condvar,
}

impl Backend {
    pub fn new(config: BackendConfig) -> Arc<Backend> {
        Arc::new(Backend {
            config,
            script_cursor: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
            in_flight: std::sync::Mutex::new(0),
            in_flight_cv: std::sync::Condvar::new(),
        })
    }

    /// Total chat calls issued through this instance (mock and HTTP alike).
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn next_script_index(&self) -> usize {
        self.script_cursor.fetch_add(1, Ordering::SeqCst)
    }

    /// Single chat completion with retry on transient failures (timeouts,
    /// 429, 5xx) up to `max_retries`, exponential backoff between attempts.
    pub fn chat_complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let _permit = self.acquire_slot();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let outcome = match self.config.api_style {
                ApiStyle::Mock => mock::mock_call(self, req),
                ApiStyle::OpenaiChat => http::http_call(&self.config, req),
            };
            match outcome {
                Ok(mut resp) => {
                    resp.attempts = attempts;
                    resp.latency_ms = started.elapsed().as_millis() as u64;
                    return Ok(resp);
                }
                Err(CallError::Transient(status)) => {
                    if attempts > self.config.max_retries {
                        return Err(GraspError::BackendExhausted {
                            backend: self.config.name.clone(),
                            attempts,
                            last_status: status,
                        });
                    }
                    let delay = self.config.backoff.delay_ms(attempts - 1);
                    std::thread::sleep(std::time::Duration::from_millis(delay));
                }
                Err(CallError::Rejected(status, message)) => {
                    return Err(GraspError::BackendRejected {
                        backend: self.config.name.clone(),
                        status,
                        message,
                    });
                }
            }
        }
    }

    /// Block while the configured in-flight cap is saturated.
    fn acquire_slot(&self) -> Option<SlotGuard<'_>> {
        let cap = self.config.in_flight_cap?;
        let mut count = self.in_flight.lock().unwrap();
        while *count >= cap {
            count = self.in_flight_cv.wait(count).unwrap();
        }
        *count += 1;
        Some(SlotGuard { backend: self })
    }

    /// Structured completion. Native-schema backends get the schema attached
    /// to the request; either way the response text is parsed as JSON and
    /// validated, retrying up to `schema_retries` with the validation error
    /// appended as a corrective system message.
    pub fn complete_structured(&self, req: &ChatRequest, schema: &Value) -> Result<Value> {
        let mut attempt_req = req.clone();
        attempt_req.response_schema = Some(schema.clone());
        let mut last_error = String::new();
        for retry in 0..=self.config.schema_retries {
            let resp = self.chat_complete(&attempt_req)?;
            match parse_structured_text(&resp.text, schema) {
                Ok(value) => return Ok(value),
                Err(msg) => {
                    last_error = msg;
                    if retry < self.config.schema_retries {
                        attempt_req.messages.push(ChatMessage::text(
                            Role::System,
                            format!(
                                "The previous reply was not valid for the required schema: {last_error}. \
                                 Reply with a single JSON object matching the schema."
                            ),
                        ));
                    }
                }
            }
        }
        Err(GraspError::StructuredOutput {
            retries: self.config.schema_retries,
            last_error,
        })
    }
}

/// Parse response text as JSON (tolerating a fenced code block) and validate
/// it against the schema.
fn parse_structured_text(text: &str, schema: &Value) -> std::result::Result<Value, String> {
    let raw = strip_code_fence(text);
    let value: Value =
        serde_json::from_str(raw).map_err(|e| format!("response is not valid JSON: {e}"))?;
    validate_against_schema(&value, schema)?;
    Ok(value)
}

fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(body) = t.strip_prefix("```") {
        if let Some(end) = body.rfind("```") {
            let body = &body[..end];
            // Drop an optional language tag on the opening fence.
            return match body.split_once('\n') {
                Some((first, rest)) if !first.contains('{') => rest,
                _ => body,
            };
        }
    }
    t
}

struct SlotGuard<'a> {
    backend: &'a Backend,
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.backend.in_flight.lock().unwrap();
        *count -= 1;
        self.backend.in_flight_cv.notify_one();
    }
}

/// Shared set of backend instances keyed by model name.
///
/// Models without an explicit config run on the deterministic mock backend,
/// created on first use and cached so call counters stay meaningful.
#[derive(Default)]
pub struct BackendSet {
    run_seed: u64,
    default_mock_latency_ms: u64,
    inner: std::sync::Mutex<std::collections::HashMap<String, Arc<Backend>>>,
}

impl BackendSet {
    pub fn new(run_seed: u64) -> BackendSet {
        BackendSet {
            run_seed,
            ..BackendSet::default()
        }
    }

    /// Build from the config's `model_config` block. Mock backends without an
    /// explicit seed inherit the run seed.
    pub fn from_models(
        models: &indexmap::IndexMap<String, BackendConfig>,
        run_seed: u64,
    ) -> BackendSet {
        let set = BackendSet::new(run_seed);
        for cfg in models.values() {
            let mut cfg = cfg.clone();
            if cfg.api_style == ApiStyle::Mock && cfg.mock.seed == 0 {
                cfg.mock.seed = run_seed;
            }
            set.insert(cfg);
        }
        set
    }

    /// Latency applied to implicitly-created mock backends.
    pub fn with_default_mock_latency(mut self, ms: u64) -> BackendSet {
        self.default_mock_latency_ms = ms;
        self
    }

    pub fn insert(&self, config: BackendConfig) {
        let name = config.name.clone();
        self.inner.lock().unwrap().insert(name, Backend::new(config));
    }

    pub fn get(&self, model: &str) -> Arc<Backend> {
        let mut inner = self.inner.lock().unwrap();
        inner
            .entry(model.to_string())
            .or_insert_with(|| {
                let mut cfg = BackendConfig::mock(model);
                cfg.mock.seed = self.run_seed;
                cfg.mock.latency_ms = self.default_mock_latency_ms;
                Backend::new(cfg)
            })
            .clone()
    }

    /// Look up without creating (for call-count assertions).
    pub fn try_get(&self, model: &str) -> Option<Arc<Backend>> {
        self.inner.lock().unwrap().get(model).cloned()
    }

    /// Total chat calls across all backends.
    pub fn total_calls(&self) -> usize {
        self.inner.lock().unwrap().values().map(|b| b.call_count()).sum()
    }
}

/// Internal per-attempt outcome used by the retry loop.
#[derive(Debug)]
pub(crate) enum CallError {
    /// Worth retrying: timeout, 429, or 5xx.
    Transient(u16),
    /// Permanent rejection (other 4xx, malformed response).
    Rejected(u16, String),
}
