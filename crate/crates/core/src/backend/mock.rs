//! Deterministic scriptable mock backend.
//!
//! With a script configured, steps are consumed in call order and the last
//! step repeats once the script is exhausted. Without a script, responses are
//! a pure function of (model, messages, seed) so identical requests always
//! produce identical output regardless of scheduling.

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{CallError, ChatRequest, ChatResponse, MockStep, ToolCall, Usage};

pub(crate) fn mock_call(
    backend: &super::Backend,
    req: &ChatRequest,
) -> Result<ChatResponse, CallError> {
    let spec = &backend.config.mock;
    if spec.latency_ms > 0 {
        std::thread::sleep(std::time::Duration::from_millis(spec.latency_ms));
    }
    if !spec.script.is_empty() {
        let idx = backend.next_script_index().min(spec.script.len() - 1);
        return scripted(&spec.script[idx], idx, req);
    }
    Ok(hashed_response(req, spec.seed))
}

fn scripted(step: &MockStep, idx: usize, req: &ChatRequest) -> Result<ChatResponse, CallError> {
    match step {
        MockStep::Status(code) => {
            if *code == 429 || *code >= 500 {
                Err(CallError::Transient(*code))
            } else {
                Err(CallError::Rejected(*code, format!("scripted status {code}")))
            }
        }
        MockStep::Text(text) => Ok(response_with_text(text.clone(), req)),
        MockStep::ToolCall { name, arguments } => Ok(ChatResponse {
            text: String::new(),
            tool_calls: vec![ToolCall {
                id: format!("call_{idx}"),
                name: name.clone(),
                arguments: arguments.to_string(),
            }],
            finish_reason: "tool_calls".to_string(),
            usage: usage_for(req, 0),
            latency_ms: 0,
            attempts: 0,
        }),
    }
}

fn response_with_text(text: String, req: &ChatRequest) -> ChatResponse {
    let completion = (text.len() as u64).div_ceil(4);
    ChatResponse {
        usage: usage_for(req, completion),
        text,
        tool_calls: Vec::new(),
        finish_reason: "stop".to_string(),
        latency_ms: 0,
        attempts: 0,
    }
}

fn usage_for(req: &ChatRequest, completion_tokens: u64) -> Usage {
    let prompt_chars: usize = req
        .messages
        .iter()
        .map(|m| m.text_content().len())
        .sum();
    Usage {
        prompt_tokens: (prompt_chars as u64).div_ceil(4),
        completion_tokens,
    }
}

fn request_digest(req: &ChatRequest, seed: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(req.model.as_bytes());
    hasher.update(seed.to_le_bytes());
    if let Ok(bytes) = serde_json::to_vec(&req.messages) {
        hasher.update(&bytes);
    }
    hasher.finalize().into()
}

fn hex_prefix(digest: &[u8; 32], n: usize) -> String {
    digest.iter().take(n).map(|b| format!("{b:02x}")).collect()
}

/// Hash-based response: schema-shaped JSON when the request carries a
/// response schema, otherwise a short tagged text.
fn hashed_response(req: &ChatRequest, seed: u64) -> ChatResponse {
    let digest = request_digest(req, seed);
    let text = match &req.response_schema {
        Some(schema) => synthesize_for_schema(schema, &digest).to_string(),
        None => format!("mock[{}]:{}", req.model, hex_prefix(&digest, 6)),
    };
    response_with_text(text, req)
}

/// Fill a (subset) JSON schema with values derived from the digest.
fn synthesize_for_schema(schema: &Value, digest: &[u8; 32]) -> Value {
    fn seed_for(digest: &[u8; 32], salt: &str) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(digest);
        hasher.update(salt.as_bytes());
        let out: [u8; 32] = hasher.finalize().into();
        u64::from_le_bytes(out[..8].try_into().unwrap_or_default())
    }
    fn build(schema: &Value, digest: &[u8; 32], path: &str) -> Value {
        let ty = schema.get("type").and_then(|t| t.as_str()).unwrap_or("object");
        let h = seed_for(digest, path);
        match ty {
            "string" => Value::String(format!("mock:{path}:{:x}", h & 0xffff_ffff)),
            "integer" => Value::from((h % 100) as i64),
            "number" => {
                // Stay in [0, 1] so confidence-style fields look plausible.
                serde_json::Number::from_f64((h % 1000) as f64 / 1000.0)
                    .map(Value::Number)
                    .unwrap_or(Value::from(0))
            }
            "boolean" => Value::Bool(h % 2 == 0),
            "array" => Value::Array(Vec::new()),
            _ => {
                let mut out = serde_json::Map::new();
                if let Some(props) = schema.get("properties").and_then(|p| p.as_object()) {
                    for (name, sub) in props {
                        out.insert(name.clone(), build(sub, digest, name));
                    }
                }
                Value::Object(out)
            }
        }
    }
    build(schema, digest, "root")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Backend, BackendConfig};
    use crate::config::Role;
    use crate::backend::ChatMessage;
    use serde_json::json;

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new("m", vec![ChatMessage::text(Role::User, text)])
    }

    #[test]
    fn scripted_text_and_latency() {
        let backend = Backend::new(
            BackendConfig::mock("m")
                .with_script(vec![MockStep::Text("A".into())])
                .with_latency_ms(20),
        );
        let resp = backend.chat_complete(&req("hi")).unwrap();
        assert_eq!(resp.text, "A");
        assert!(resp.latency_ms >= 20, "latency {} < 20", resp.latency_ms);
    }

    #[test]
    fn script_exhaustion_repeats_last() {
        let backend = Backend::new(
            BackendConfig::mock("m").with_script(vec![MockStep::Text("A".into()), MockStep::Text("B".into())]),
        );
        let texts: Vec<String> = (0..4)
            .map(|_| backend.chat_complete(&req("x")).unwrap().text)
            .collect();
        assert_eq!(texts, vec!["A", "B", "B", "B"]);
    }

    #[test]
    fn fail_twice_then_succeed_counts_attempts() {
        let backend = Backend::new(BackendConfig::mock("m").with_script(vec![
            MockStep::Status(503),
            MockStep::Status(503),
            MockStep::Text("ok".into()),
        ]));
        let resp = backend.chat_complete(&req("x")).unwrap();
        assert_eq!(resp.text, "ok");
        assert_eq!(resp.attempts, 3);
    }

    #[test]
    fn no_retry_boundary() {
        let mut cfg = BackendConfig::mock("m").with_script(vec![MockStep::Status(503)]);
        cfg.max_retries = 0;
        let backend = Backend::new(cfg);
        let err = backend.chat_complete(&req("x")).unwrap_err();
        match err {
            crate::GraspError::BackendExhausted { last_status, attempts, .. } => {
                assert_eq!(last_status, 503);
                assert_eq!(attempts, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn client_error_is_not_retried() {
        let backend = Backend::new(
            BackendConfig::mock("m").with_script(vec![MockStep::Status(400), MockStep::Text("never".into())]),
        );
        let err = backend.chat_complete(&req("x")).unwrap_err();
        assert!(matches!(err, crate::GraspError::BackendRejected { status: 400, .. }));
    }

    #[test]
    fn hash_mode_is_deterministic() {
        let b1 = Backend::new(BackendConfig::mock("m"));
        let b2 = Backend::new(BackendConfig::mock("m"));
        let a = b1.chat_complete(&req("same input")).unwrap();
        let b = b2.chat_complete(&req("same input")).unwrap();
        assert_eq!(a.text, b.text);
        let c = b1.chat_complete(&req("different input")).unwrap();
        assert_ne!(a.text, c.text);
    }

    #[test]
    fn hash_mode_honors_schema() {
        let backend = Backend::new(BackendConfig::mock("m"));
        let mut r = req("structured");
        r.response_schema = Some(json!({
            "type": "object",
            "properties": {
                "answer": {"type": "string"},
                "confidence": {"type": "number"},
            },
            "required": ["answer", "confidence"],
        }));
        let resp = backend.chat_complete(&r).unwrap();
        let v: Value = serde_json::from_str(&resp.text).unwrap();
        assert!(v["answer"].is_string());
        let c = v["confidence"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&c));
    }

    #[test]
    fn tool_call_step() {
        let backend = Backend::new(BackendConfig::mock("m").with_script(vec![MockStep::ToolCall {
            name: "search".into(),
            arguments: json!({"query": "rust"}),
        }]));
        let resp = backend.chat_complete(&req("x")).unwrap();
        assert_eq!(resp.tool_calls.len(), 1);
        assert_eq!(resp.tool_calls[0].name, "search");
        assert_eq!(resp.finish_reason, "tool_calls");
    }
}
