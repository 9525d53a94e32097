//! OpenAI-compatible chat completions over HTTP.
//!
//! Wire shape: `POST {base_url}/chat/completions` with `model`, `messages`
//! (content as a plain string or a typed-part array), sampling parameters,
//! optional `tools`, optional `response_format`. Bearer auth comes from the
//! environment variable named in the backend config.

use serde_json::{json, Map, Value};

use super::{BackendConfig, CallError, ChatMessage, ChatRequest, ChatResponse, Part, ToolCall, Usage};

pub(crate) fn http_call(cfg: &BackendConfig, req: &ChatRequest) -> Result<ChatResponse, CallError> {
    let body = build_body(cfg, req);
    let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
    let agent = ureq::builder()
        .timeout(std::time::Duration::from_millis(cfg.timeout_ms))
        .build();
    let mut call = agent.post(&url).set("content-type", "application/json");
    if let Some(var) = &cfg.auth_env {
        if let Ok(token) = std::env::var(var) {
            call = call.set("authorization", &format!("Bearer {token}"));
        }
    }
    match call.send_json(body) {
        Ok(resp) => {
            let value: Value = resp
                .into_json()
                .map_err(|e| CallError::Rejected(0, format!("unparseable response body: {e}")))?;
            parse_completion(&value)
        }
        Err(ureq::Error::Status(code, resp)) => {
            let text = resp.into_string().unwrap_or_default();
            if code == 429 || code >= 500 {
                Err(CallError::Transient(code))
            } else {
                Err(CallError::Rejected(code, text))
            }
        }
        Err(ureq::Error::Transport(_)) => Err(CallError::Transient(0)),
    }
}

fn build_body(cfg: &BackendConfig, req: &ChatRequest) -> Value {
    let mut body = Map::new();
    body.insert("model".to_string(), Value::String(req.model.clone()));
    body.insert(
        "messages".to_string(),
        Value::Array(req.messages.iter().map(message_to_wire).collect()),
    );
    for (k, v) in &req.parameters {
        body.insert(k.clone(), v.clone());
    }
    if !req.tools.is_empty() {
        let tools: Vec<Value> = req
            .tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": t.name,
                        "description": t.description,
                        "parameters": t.parameters,
                    }
                })
            })
            .collect();
        body.insert("tools".to_string(), Value::Array(tools));
    }
    if let (Some(schema), true) = (&req.response_schema, cfg.supports_native_schema) {
        body.insert(
            "response_format".to_string(),
            json!({
                "type": "json_schema",
                "json_schema": {"name": "response", "schema": schema, "strict": true}
            }),
        );
    }
    Value::Object(body)
}

pub(crate) fn message_to_wire(msg: &ChatMessage) -> Value {
    let mut out = Map::new();
    out.insert("role".to_string(), Value::String(msg.role.clone()));
    let single_text = msg.parts.len() == 1 && matches!(msg.parts[0], Part::Text(_));
    let content = if single_text {
        Value::String(msg.text_content())
    } else {
        Value::Array(
            msg.parts
                .iter()
                .map(|p| match p {
                    Part::Text(t) => json!({"type": "text", "text": t}),
                    Part::ImageUrl(u) => json!({"type": "image_url", "image_url": {"url": u}}),
                    Part::AudioUrl(u) => json!({"type": "audio_url", "audio_url": {"url": u}}),
                })
                .collect(),
        )
    };
    out.insert("content".to_string(), content);
    if let Some(id) = &msg.tool_call_id {
        out.insert("tool_call_id".to_string(), Value::String(id.clone()));
    }
    if !msg.tool_calls.is_empty() {
        let calls: Vec<Value> = msg
            .tool_calls
            .iter()
            .map(|c| {
                json!({
                    "id": c.id,
                    "type": "function",
                    "function": {"name": c.name, "arguments": c.arguments},
                })
            })
            .collect();
        out.insert("tool_calls".to_string(), Value::Array(calls));
    }
    Value::Object(out)
}

fn parse_completion(value: &Value) -> Result<ChatResponse, CallError> {
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| CallError::Rejected(0, "response has no choices".to_string()))?;
    let message = choice.get("message").cloned().unwrap_or(Value::Null);
    let text = message
        .get("content")
        .and_then(|c| c.as_str())
        .unwrap_or("")
        .to_string();
    let mut tool_calls = Vec::new();
    if let Some(calls) = message.get("tool_calls").and_then(|t| t.as_array()) {
        for (i, c) in calls.iter().enumerate() {
            let f = c.get("function").cloned().unwrap_or(Value::Null);
            tool_calls.push(ToolCall {
                id: c
                    .get("id")
                    .and_then(|v| v.as_str())
                    .map(String::from)
                    .unwrap_or_else(|| format!("call_{i}")),
                name: f
                    .get("name")
                    .and_then(|v| v.as_str())
                    .unwrap_or("")
                    .to_string(),
                arguments: f
                    .get("arguments")
                    .and_then(|v| v.as_str())
                    .unwrap_or("{}")
                    .to_string(),
            });
        }
    }
    let usage = value.get("usage").cloned().unwrap_or(Value::Null);
    Ok(ChatResponse {
        text,
        tool_calls,
        finish_reason: choice
            .get("finish_reason")
            .and_then(|v| v.as_str())
            .unwrap_or("stop")
            .to_string(),
        usage: Usage {
            prompt_tokens: usage.get("prompt_tokens").and_then(|v| v.as_u64()).unwrap_or(0),
            completion_tokens: usage
                .get("completion_tokens")
                .and_then(|v| v.as_u64())
                .unwrap_or(0),
        },
        latency_ms: 0,
        attempts: 0,
    })
}
