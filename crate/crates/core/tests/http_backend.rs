//! OpenAI-compatible HTTP backend against a minimal in-process server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use grasp_core::backend::{Backend, BackendConfig, ChatMessage, ChatRequest};
use grasp_core::config::Role;
use grasp_core::GraspError;
use serde_json::{json, Value};

/// One received request: (path, authorization header, body).
type Received = (String, Option<String>, Value);

/// Tiny scripted HTTP/1.1 server: each connection gets the next response
/// from the plan. Returns (base_url, received-requests, handle).
fn spawn_server(
    plan: Vec<(u16, Value)>,
) -> (String, Arc<std::sync::Mutex<Vec<Received>>>, std::thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let received = Arc::new(std::sync::Mutex::new(Vec::new()));
    let received_clone = Arc::clone(&received);
    let cursor = AtomicUsize::new(0);
    let handle = std::thread::spawn(move || {
        let total = plan.len();
        while cursor.load(Ordering::SeqCst) < total {
            let Ok((stream, _)) = listener.accept() else { break };
            let mut reader = BufReader::new(stream);
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
            let mut content_length = 0usize;
            let mut auth = None;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap_or(0);
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line.split_once(':').unwrap().1.trim().to_string());
                }
                if line == "\r\n" || line == "\n" {
                    break;
                }
            }
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body).ok();
            let body_json: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            received_clone.lock().unwrap().push((path, auth, body_json));

            let idx = cursor.fetch_add(1, Ordering::SeqCst).min(total - 1);
            let (status, ref payload) = plan[idx];
            let body = payload.to_string();
            let reason = match status {
                200 => "OK",
                400 => "Bad Request",
                429 => "Too Many Requests",
                _ => "Error",
            };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            reader.get_mut().write_all(response.as_bytes()).ok();
        }
    });
    (format!("http://{addr}"), received, handle)
}

fn completion_body(text: &str) -> Value {
    json!({
        "choices": [{"message": {"content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 5, "completion_tokens": 2},
    })
}

fn cfg(base_url: &str) -> BackendConfig {
    let mut cfg = BackendConfig::openai_chat("remote", base_url);
    cfg.backoff.initial_ms = 1;
    cfg.backoff.max_ms = 5;
    cfg.timeout_ms = 5_000;
    cfg
}

fn request(text: &str) -> ChatRequest {
    ChatRequest::new("remote-model", vec![ChatMessage::text(Role::User, text)])
}

#[test]
fn posts_to_chat_completions_with_bearer_auth() {
    let (url, received, handle) = spawn_server(vec![(200, completion_body("hello"))]);
    std::env::set_var("TEST_BACKEND_TOKEN", "sekrit");
    let mut config = cfg(&url);
    config.auth_env = Some("TEST_BACKEND_TOKEN".to_string());
    let backend = Backend::new(config);
    let resp = backend.chat_complete(&request("hi")).unwrap();
    handle.join().unwrap();
    assert_eq!(resp.text, "hello");
    assert_eq!(resp.usage.prompt_tokens, 5);
    let reqs = received.lock().unwrap();
    assert_eq!(reqs.len(), 1);
    let (path, auth, body) = &reqs[0];
    assert_eq!(path, "/chat/completions");
    assert_eq!(auth.as_deref(), Some("Bearer sekrit"));
    assert_eq!(body["model"], "remote-model");
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "hi");
}

#[test]
fn retries_transient_statuses_then_succeeds() {
    let (url, received, handle) = spawn_server(vec![
        (429, json!({"error": "slow down"})),
        (503, json!({"error": "busy"})),
        (200, completion_body("finally")),
    ]);
    let backend = Backend::new(cfg(&url));
    let resp = backend.chat_complete(&request("go")).unwrap();
    handle.join().unwrap();
    assert_eq!(resp.text, "finally");
    assert_eq!(resp.attempts, 3);
    assert_eq!(received.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, received, handle) = spawn_server(vec![(400, json!({"error": "bad request"}))]);
    let backend = Backend::new(cfg(&url));
    let err = backend.chat_complete(&request("go")).unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, GraspError::BackendRejected { status: 400, .. }));
    assert_eq!(received.lock().unwrap().len(), 1);
}

#[test]
fn exhausted_retries_report_last_status() {
    let (url, _received, handle) = spawn_server(vec![
        (503, json!({})),
        (503, json!({})),
        (503, json!({})),
    ]);
    let mut config = cfg(&url);
    config.max_retries = 2;
    let backend = Backend::new(config);
    let err = backend.chat_complete(&request("go")).unwrap_err();
    handle.join().unwrap();
    match err {
        GraspError::BackendExhausted { attempts, last_status, .. } => {
            assert_eq!(attempts, 3);
            assert_eq!(last_status, 503);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn native_schema_passes_response_format() {
    let (url, received, handle) =
        spawn_server(vec![(200, completion_body("{\"answer\": \"x\"}"))]);
    let mut config = cfg(&url);
    config.supports_native_schema = true;
    let backend = Backend::new(config);
    let schema = json!({
        "type": "object",
        "properties": {"answer": {"type": "string"}},
        "required": ["answer"],
    });
    let parsed = backend.complete_structured(&request("structured"), &schema).unwrap();
    handle.join().unwrap();
    assert_eq!(parsed["answer"], "x");
    let reqs = received.lock().unwrap();
    assert_eq!(reqs[0].2["response_format"]["type"], "json_schema");
    assert_eq!(
        reqs[0].2["response_format"]["json_schema"]["schema"]["type"],
        "object"
    );
}

#[test]
fn structured_fallback_appends_corrective_message() {
    // Non-native backend: invalid JSON once, then a schema-valid reply.
    let (url, received, handle) = spawn_server(vec![
        (200, completion_body("not json at all")),
        (200, completion_body("{\"answer\": \"ok\"}")),
    ]);
    let backend = Backend::new(cfg(&url));
    let schema = json!({
        "type": "object",
        "properties": {"answer": {"type": "string"}},
        "required": ["answer"],
    });
    let parsed = backend.complete_structured(&request("structured"), &schema).unwrap();
    handle.join().unwrap();
    assert_eq!(parsed["answer"], "ok");
    let reqs = received.lock().unwrap();
    assert_eq!(reqs.len(), 2);
    // Second request carries the corrective system message.
    let msgs = reqs[1].2["messages"].as_array().unwrap();
    assert_eq!(msgs.last().unwrap()["role"], "system");
    assert!(msgs.last().unwrap()["content"]
        .as_str()
        .unwrap()
        .contains("schema"));
    // No response_format without native support.
    assert!(reqs[0].2.get("response_format").is_none());
}
