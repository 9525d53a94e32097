//! Node execution against per-record state: prompt rendering, backend calls,
//! samplers, lambdas, agents, and hooks.
//!
//! Every node execution appends exactly one trace entry, success or failure;
//! agent-internal turns are sub-entries of that one entry. A node writes only
//! its declared output keys (plus the agent's `__transcript` companion).

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::backend::{
    encode_media_with_base, BackendSet, ChatMessage, ChatRequest, Part, ToolSpec,
};
use crate::config::{ChatMode, GraphSettings, ModelSpec, NodeType, PartTemplate, Role};
use crate::error::{GraspError, Result};
use crate::graph::BoundNode;
use crate::registry::ValuesMap;
use crate::template;

/// One node execution record.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NodeTrace {
    pub node: String,
    pub attempts: u32,
    pub duration_ms: u64,
    pub error: Option<String>,
    /// Agent sub-turns (empty for non-agent nodes).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub turns: Vec<String>,
}

/// Mutable per-record state flowing through the graph.
#[derive(Debug, Clone)]
pub struct RecordState {
    pub record_id: u64,
    pub values: ValuesMap,
    pub history: Vec<ChatMessage>,
    pub trace: Vec<NodeTrace>,
}

impl RecordState {
    pub fn new(record_id: u64, values: ValuesMap) -> RecordState {
        RecordState {
            record_id,
            values,
            history: Vec::new(),
            trace: Vec::new(),
        }
    }

    /// Node executions so far (loop budget accounting).
    pub fn executions(&self) -> usize {
        self.trace.len()
    }
}

/// Shared context for node executors.
pub struct ExecContext<'a> {
    pub backends: &'a BackendSet,
    pub settings: &'a GraphSettings,
    pub run_seed: u64,
    pub media_base: Option<PathBuf>,
}

impl<'a> ExecContext<'a> {
    pub fn new(backends: &'a BackendSet, settings: &'a GraphSettings, run_seed: u64) -> Self {
        ExecContext {
            backends,
            settings,
            run_seed,
            media_base: None,
        }
    }

    pub fn with_media_base(mut self, base: Option<PathBuf>) -> Self {
        self.media_base = base;
        self
    }
}

/// Execute one node against the state, appending exactly one trace entry.
pub fn execute_node(node: &BoundNode, state: &mut RecordState, ctx: &ExecContext) -> Result<()> {
    let started = Instant::now();
    let mut attempts = 1;
    let mut turns = Vec::new();
    let result = run_node_inner(node, state, ctx, &mut attempts, &mut turns);
    state.trace.push(NodeTrace {
        node: node.name.clone(),
        attempts,
        duration_ms: started.elapsed().as_millis() as u64,
        error: result.as_ref().err().map(|e| e.to_string()),
        turns,
    });
    result
}

fn run_node_inner(
    node: &BoundNode,
    state: &mut RecordState,
    ctx: &ExecContext,
    attempts: &mut u32,
    turns: &mut Vec<String>,
) -> Result<()> {
    run_hook(node, HookPhase::Pre, state)?;
    match node.spec.node_type {
        NodeType::Llm => exec_llm(node, state, ctx, attempts)?,
        NodeType::MultiLlm => exec_multi_llm(node, state, ctx, turns)?,
        NodeType::WeightedSampler => exec_weighted_sampler(node, state, ctx)?,
        NodeType::Lambda => exec_lambda(node, state)?,
        NodeType::Agent => exec_agent(node, state, ctx, turns)?,
        NodeType::Subgraph => {
            // Removed during compilation.
            return Err(GraspError::NodeFailed {
                node: node.name.clone(),
                message: "subgraph node survived compilation".to_string(),
            });
        }
    }
    run_hook(node, HookPhase::Post, state)?;
    Ok(())
}

enum HookPhase {
    Pre,
    Post,
}

fn run_hook(node: &BoundNode, phase: HookPhase, state: &mut RecordState) -> Result<()> {
    let hook = match phase {
        HookPhase::Pre => &node.pre_hook,
        HookPhase::Post => &node.post_hook,
    };
    if let Some(h) = hook {
        let next = h(std::mem::take(&mut state.values)).map_err(|e| GraspError::NodeFailed {
            node: node.name.clone(),
            message: format!("hook failed: {e}"),
        })?;
        state.values = next;
    }
    Ok(())
}

/// A rendered prompt: the full request message list, plus just the new
/// non-system turn messages (for appending to history without duplicating
/// the replayed window).
pub struct RenderedPrompt {
    pub messages: Vec<ChatMessage>,
    pub new_turn: Vec<ChatMessage>,
}

/// Render prompt templates into chat messages.
///
/// `{var}` placeholders substitute from state values and graph settings. In
/// multiturn mode the last `chat_history_window_size` history messages are
/// prepended after the system messages; singleturn ignores history. Media
/// part templates resolve to base64 data URLs.
pub fn render_prompt(
    node: &str,
    templates: &[crate::config::MessageTemplate],
    state: &RecordState,
    settings: &GraphSettings,
    media_base: Option<&Path>,
) -> Result<Vec<ChatMessage>> {
    Ok(render_prompt_full(node, templates, state, settings, media_base)?.messages)
}

pub fn render_prompt_full(
    node: &str,
    templates: &[crate::config::MessageTemplate],
    state: &RecordState,
    settings: &GraphSettings,
    media_base: Option<&Path>,
) -> Result<RenderedPrompt> {
    let lookup = |key: &str| -> Option<String> {
        if let Some(v) = state.values.get(key) {
            return Some(template::value_to_text(v));
        }
        match key {
            "chat_conversation" => Some(
                match settings.chat_conversation {
                    ChatMode::SingleTurn => "singleturn",
                    ChatMode::MultiTurn => "multiturn",
                }
                .to_string(),
            ),
            "chat_history_window_size" => Some(settings.chat_history_window_size.to_string()),
            _ => None,
        }
    };

    let mut rendered: Vec<ChatMessage> = Vec::new();
    for t in templates {
        let mut parts = Vec::new();
        for part in &t.parts {
            match part {
                PartTemplate::Text(text) => {
                    parts.push(Part::Text(template::substitute(text, node, lookup)?));
                }
                PartTemplate::ImageUrl(tpl) => {
                    parts.push(Part::ImageUrl(render_media(node, tpl, state, media_base, lookup)?));
                }
                PartTemplate::AudioUrl(tpl) => {
                    parts.push(Part::AudioUrl(render_media(node, tpl, state, media_base, lookup)?));
                }
            }
        }
        rendered.push(ChatMessage {
            role: t.role.as_str().to_string(),
            parts,
            tool_call_id: None,
            tool_calls: Vec::new(),
        });
    }

    let new_turn: Vec<ChatMessage> = rendered.iter().filter(|m| m.role != "system").cloned().collect();

    if settings.chat_conversation == ChatMode::MultiTurn && !state.history.is_empty() {
        let window = settings.chat_history_window_size;
        let start = state.history.len().saturating_sub(window);
        let tail: Vec<ChatMessage> = state.history[start..].to_vec();
        // History goes after the leading system messages.
        let split = rendered
            .iter()
            .position(|m| m.role != "system")
            .unwrap_or(rendered.len());
        let mut out = Vec::with_capacity(rendered.len() + tail.len());
        out.extend_from_slice(&rendered[..split]);
        out.extend(tail);
        out.extend_from_slice(&rendered[split..]);
        return Ok(RenderedPrompt {
            messages: out,
            new_turn,
        });
    }
    Ok(RenderedPrompt {
        messages: rendered,
        new_turn,
    })
}

/// Media templates that are exactly `{key}` pass the raw value (which may be
/// a `{path, mime}` object) to the encoder; anything else substitutes as text
/// first.
fn render_media(
    node: &str,
    tpl: &str,
    state: &RecordState,
    media_base: Option<&Path>,
    lookup: impl FnMut(&str) -> Option<String>,
) -> Result<String> {
    let trimmed = tpl.trim();
    let reference: Value = if trimmed.len() > 2 && trimmed.starts_with('{') && trimmed.ends_with('}') {
        let key = &trimmed[1..trimmed.len() - 1];
        if key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            match state.values.get(key) {
                Some(v) => v.clone(),
                None => {
                    return Err(GraspError::MissingKey {
                        node: node.to_string(),
                        key: key.to_string(),
                    })
                }
            }
        } else {
            Value::String(template::substitute(tpl, node, lookup)?)
        }
    } else {
        Value::String(template::substitute(tpl, node, lookup)?)
    };
    encode_media_with_base(&reference, media_base)
}

fn model_request(
    node: &BoundNode,
    model: &ModelSpec,
    messages: Vec<ChatMessage>,
) -> ChatRequest {
    let mut req = ChatRequest::new(model.name.clone(), messages);
    req.parameters = model.parameters.clone();
    req.response_schema = node.structured_schema.clone();
    req.tools = node.tools.iter().map(|t| t.spec.clone()).collect();
    req
}

fn store_output(state: &mut RecordState, key: &str, value: Value) {
    state.values.insert(key.to_string(), value);
}

fn exec_llm(
    node: &BoundNode,
    state: &mut RecordState,
    ctx: &ExecContext,
    attempts: &mut u32,
) -> Result<()> {
    let model = node.spec.model.as_ref().ok_or_else(|| GraspError::NodeFailed {
        node: node.name.clone(),
        message: "llm node has no model".to_string(),
    })?;
    let rendered = render_prompt_full(
        &node.name,
        &node.spec.prompt,
        state,
        ctx.settings,
        ctx.media_base.as_deref(),
    )?;
    let backend = ctx.backends.get(&model.name);
    let req = model_request(node, model, rendered.messages);

    let response_value: Value;
    if let Some(schema) = &node.structured_schema {
        let parsed = backend.complete_structured(&req, schema)?;
        // Bind declared keys to parsed fields; a single key takes the whole
        // object when it does not name a field.
        for key in &node.spec.output_keys {
            if let Some(v) = parsed.get(key) {
                store_output(state, key, v.clone());
            } else if node.spec.output_keys.len() == 1 {
                store_output(state, key, parsed.clone());
            }
        }
        response_value = parsed;
    } else {
        let resp = backend.chat_complete(&req)?;
        *attempts = resp.attempts;
        if let Some(key) = node.spec.output_keys.first() {
            store_output(state, key, Value::String(resp.text.clone()));
        }
        response_value = Value::String(resp.text);
    }

    // History is the record's conversation log in both chat modes; the mode
    // only controls whether rendering feeds it back in.
    state.history.extend(rendered.new_turn);
    state.history.push(ChatMessage::text(
        Role::Assistant,
        template::value_to_text(&response_value),
    ));
    Ok(())
}

fn exec_multi_llm(
    node: &BoundNode,
    state: &mut RecordState,
    ctx: &ExecContext,
    turns: &mut Vec<String>,
) -> Result<()> {
    let messages = render_prompt_full(
        &node.name,
        &node.spec.prompt,
        state,
        ctx.settings,
        ctx.media_base.as_deref(),
    )?
    .messages;
    let mut results = Map::new();
    let mut failures = Vec::new();
    for model in &node.spec.models {
        let backend = ctx.backends.get(&model.name);
        let req = model_request(node, model, messages.clone());
        match backend.chat_complete(&req) {
            Ok(resp) => {
                results.insert(model.name.clone(), Value::String(resp.text));
            }
            Err(e) => {
                turns.push(format!("model {}: {e}", model.name));
                failures.push(format!("{}: {e}", model.name));
            }
        }
    }
    if results.is_empty() {
        return Err(GraspError::NodeFailed {
            node: node.name.clone(),
            message: format!("all models failed: {}", failures.join("; ")),
        });
    }
    let key = node.spec.output_keys.first().cloned().unwrap_or_default();
    store_output(state, &key, Value::Object(results));
    Ok(())
}

/// Sampler RNG seed: digest of (run_seed, record_id, node name), so resume
/// and concurrency cannot change outcomes.
pub fn sampler_seed(run_seed: u64, record_id: u64, node: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(run_seed.to_le_bytes());
    hasher.update(record_id.to_le_bytes());
    hasher.update(node.as_bytes());
    let out: [u8; 32] = hasher.finalize().into();
    u64::from_le_bytes(out[..8].try_into().unwrap_or_default())
}

fn exec_weighted_sampler(node: &BoundNode, state: &mut RecordState, ctx: &ExecContext) -> Result<()> {
    let choices = &node.spec.sampler;
    let total: f64 = choices.iter().map(|c| c.weight.max(0.0)).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(sampler_seed(ctx.run_seed, state.record_id, &node.name));
    let mut target = rng.random::<f64>() * total;
    let mut picked = choices.len() - 1;
    for (i, c) in choices.iter().enumerate() {
        let w = c.weight.max(0.0);
        if target < w {
            picked = i;
            break;
        }
        target -= w;
    }
    if let Some(key) = node.spec.output_keys.first() {
        store_output(state, key, choices[picked].value.clone());
    }
    Ok(())
}

fn exec_lambda(node: &BoundNode, state: &mut RecordState) -> Result<()> {
    let lambda = node.lambda.as_ref().ok_or_else(|| GraspError::NodeFailed {
        node: node.name.clone(),
        message: "lambda node has no callable".to_string(),
    })?;
    let outputs = lambda(&state.values).map_err(|e| GraspError::NodeFailed {
        node: node.name.clone(),
        message: e.to_string(),
    })?;
    for (key, value) in outputs {
        if !node.spec.output_keys.iter().any(|k| k == &key) {
            return Err(GraspError::UndeclaredOutput {
                node: node.name.clone(),
                key,
            });
        }
        store_output(state, &key, value);
    }
    Ok(())
}

fn exec_agent(
    node: &BoundNode,
    state: &mut RecordState,
    ctx: &ExecContext,
    turns: &mut Vec<String>,
) -> Result<()> {
    let model = node.spec.model.as_ref().ok_or_else(|| GraspError::NodeFailed {
        node: node.name.clone(),
        message: "agent node has no model".to_string(),
    })?;
    let rendered = render_prompt_full(
        &node.name,
        &node.spec.prompt,
        state,
        ctx.settings,
        ctx.media_base.as_deref(),
    )?;
    let new_turn = rendered.new_turn;
    let mut messages = rendered.messages;
    let backend = ctx.backends.get(&model.name);
    let transcript_start = messages.len();
    let tool_specs: Vec<ToolSpec> = node.tools.iter().map(|t| t.spec.clone()).collect();

    let max_turns = node.spec.max_turns.max(1);
    let mut final_text: Option<String> = None;
    for turn in 1..=max_turns {
        if let Some(text) = node.spec.inject_system_messages.get(&turn) {
            messages.push(ChatMessage::text(Role::System, text.clone()));
        }
        let mut req = ChatRequest::new(model.name.clone(), messages.clone());
        req.parameters = model.parameters.clone();
        req.tools = tool_specs.clone();
        let resp = backend.chat_complete(&req)?;

        if !resp.tool_calls.is_empty() {
            turns.push(format!(
                "turn {turn}: tool_calls [{}]",
                resp.tool_calls
                    .iter()
                    .map(|c| c.name.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
            let mut assistant = ChatMessage::text(Role::Assistant, resp.text.clone());
            assistant.tool_calls = resp.tool_calls.clone();
            messages.push(assistant);
            for call in &resp.tool_calls {
                let content = match node.tools.iter().find(|t| t.spec.name == call.name) {
                    Some(tool) => {
                        let args: Value =
                            serde_json::from_str(&call.arguments).unwrap_or(Value::Null);
                        match (tool.call)(&args) {
                            Ok(v) => v.to_string(),
                            // Tool errors feed back into the loop as text.
                            Err(e) => format!("tool error: {e}"),
                        }
                    }
                    None => format!("tool error: unknown tool {:?}", call.name),
                };
                messages.push(ChatMessage::tool_result(call.id.clone(), content));
            }
            continue;
        }

        turns.push(format!("turn {turn}: final"));
        final_text = Some(resp.text);
        break;
    }

    let Some(text) = final_text else {
        return Err(GraspError::AgentBudgetExceeded {
            node: node.name.clone(),
            max_turns,
        });
    };

    messages.push(ChatMessage::text(Role::Assistant, text.clone()));
    if let Some(key) = node.spec.output_keys.first() {
        store_output(state, key, Value::String(text));
        let transcript: Vec<Value> = messages[transcript_start..]
            .iter()
            .map(|m| serde_json::to_value(m).unwrap_or(Value::Null))
            .collect();
        state
            .values
            .insert(format!("{key}__transcript"), Value::Array(transcript));
    }
    // Full agent transcript goes to history: the new turn plus every
    // tool/assistant message from the loop.
    state.history.extend(new_turn);
    for m in messages.into_iter().skip(transcript_start) {
        if m.role != "system" {
            state.history.push(m);
        }
    }
    Ok(())
}
