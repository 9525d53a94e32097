//! YAML → [`PipelineConfig`] with full diagnostic collection.

use indexmap::IndexMap;
use serde_json::Value;

use crate::backend::{ApiStyle, Backoff, BackendConfig, MockStep};
use crate::diag::{has_errors, Diagnostic};
use crate::typeexpr::TypeExpr;

use super::value::yaml_to_json;
use super::*;

/// Successful parse: the typed config plus any non-fatal diagnostics
/// (warnings and notes).
#[derive(Debug, Clone)]
pub struct ParsedPipeline {
    pub config: PipelineConfig,
    pub diagnostics: Vec<Diagnostic>,
}

/// Parse a task YAML document.
///
/// Returns the typed config when no error-severity diagnostic was produced;
/// otherwise the full diagnostic list. Never panics on any input.
pub fn parse_pipeline_config(yaml_text: &str) -> Result<ParsedPipeline, Vec<Diagnostic>> {
    let mut w = Walk::default();

    let yaml: serde_yaml::Value = match serde_yaml::from_str(yaml_text) {
        Ok(v) => v,
        Err(e) => {
            let loc = e
                .location()
                .map(|l| format!("line {} column {}", l.line(), l.column()))
                .unwrap_or_else(|| "document".to_string());
            return Err(vec![Diagnostic::error(loc, format!("YAML syntax error: {e}"))]);
        }
    };
    let root = yaml_to_json(&yaml, &mut w.diags, "");

    let map = match &root {
        Value::Object(m) => m.clone(),
        Value::Null => serde_json::Map::new(),
        _ => {
            w.err("", "top level must be a mapping of config blocks");
            return Err(w.diags);
        }
    };

    for key in map.keys() {
        if !matches!(
            key.as_str(),
            "data_config" | "graph_config" | "output_config" | "schema_config" | "quality_config"
                | "model_config"
        ) {
            w.warn(key, "unknown top-level key ignored");
        }
    }

    let data = map
        .get("data_config")
        .map(|v| parse_data(&mut w, v));
    let graph = map
        .get("graph_config")
        .map(|v| parse_graph(&mut w, v));
    if graph.is_none() {
        w.err("graph_config", "missing graph_config block");
    }
    let output = map
        .get("output_config")
        .map(|v| parse_output(&mut w, v));
    if output.is_none() {
        w.err("output_config", "missing output_config block");
    }
    let schema = map
        .get("schema_config")
        .map(|v| parse_schema(&mut w, v));
    let quality = map
        .get("quality_config")
        .map(|v| parse_quality(&mut w, v));
    let models = map
        .get("model_config")
        .map(|v| parse_models(&mut w, v))
        .unwrap_or_default();

    // Data-less mode still needs a destination.
    let has_source = data
        .as_ref()
        .map(|d| d.source.as_ref().map(|s| s.kind != SourceKind::None).unwrap_or(false))
        .unwrap_or(false);
    let has_sink = data.as_ref().map(|d| d.sink.is_some()).unwrap_or(false);
    if !has_source && !has_sink {
        w.err("data_config", "data-less mode requires data_config.sink");
    }

    if let Some(schema) = &schema {
        w.diags.extend(super::rules::validate_schema_rules(schema));
    }

    if has_errors(&w.diags) {
        return Err(w.diags);
    }
    let (Some(graph), Some(output)) = (graph, output) else {
        return Err(w.diags);
    };
    Ok(ParsedPipeline {
        config: PipelineConfig {
            data,
            graph,
            output,
            schema,
            quality,
            models,
        },
        diagnostics: w.diags,
    })
}

/// Parse a subgraph library file: either a bare graph mapping or a document
/// with a single `graph_config` block.
pub fn parse_subgraph_file(yaml_text: &str) -> Result<GraphConfig, Vec<Diagnostic>> {
    let mut w = Walk::default();
    let yaml: serde_yaml::Value = match serde_yaml::from_str(yaml_text) {
        Ok(v) => v,
        Err(e) => return Err(vec![Diagnostic::error("document", format!("YAML syntax error: {e}"))]),
    };
    let root = yaml_to_json(&yaml, &mut w.diags, "");
    let graph_value = match &root {
        Value::Object(m) if m.contains_key("graph_config") => m["graph_config"].clone(),
        other => other.clone(),
    };
    let graph = parse_graph(&mut w, &graph_value);
    if has_errors(&w.diags) {
        Err(w.diags)
    } else {
        Ok(graph)
    }
}

#[derive(Default)]
struct Walk {
    diags: Vec<Diagnostic>,
}

impl Walk {
    fn err(&mut self, path: &str, msg: impl Into<String>) {
        self.diags.push(Diagnostic::error(path, msg));
    }
    fn warn(&mut self, path: &str, msg: impl Into<String>) {
        self.diags.push(Diagnostic::warning(path, msg));
    }

    fn expect_map<'v>(&mut self, v: &'v Value, path: &str) -> Option<&'v serde_json::Map<String, Value>> {
        match v.as_object() {
            Some(m) => Some(m),
            None => {
                self.err(path, "expected a mapping");
                None
            }
        }
    }

    fn expect_str(&mut self, v: &Value, path: &str) -> Option<String> {
        match v.as_str() {
            Some(s) => Some(s.to_string()),
            None => {
                self.err(path, "expected a string");
                None
            }
        }
    }

    fn expect_bool(&mut self, v: &Value, path: &str) -> Option<bool> {
        match v.as_bool() {
            Some(b) => Some(b),
            None => {
                self.err(path, "expected a boolean");
                None
            }
        }
    }

    fn expect_usize(&mut self, v: &Value, path: &str) -> Option<usize> {
        match v.as_u64() {
            Some(n) => Some(n as usize),
            None => {
                self.err(path, "expected a non-negative integer");
                None
            }
        }
    }

    fn expect_f64(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v.as_f64() {
            Some(n) => Some(n),
            None => {
                self.err(path, "expected a number");
                None
            }
        }
    }

    /// String or list-of-strings.
    fn str_list(&mut self, v: &Value, path: &str) -> Vec<String> {
        match v {
            Value::String(s) => vec![s.clone()],
            Value::Array(items) => items
                .iter()
                .enumerate()
                .filter_map(|(i, it)| self.expect_str(it, &format!("{path}[{i}]")))
                .collect(),
            _ => {
                self.err(path, "expected a string or list of strings");
                Vec::new()
            }
        }
    }
}

fn parse_data(w: &mut Walk, v: &Value) -> DataConfig {
    let path = "data_config";
    let Some(map) = w.expect_map(v, path) else {
        return DataConfig::default();
    };
    let mut out = DataConfig::default();
    for (key, val) in map {
        match key.as_str() {
            "source" => out.source = parse_endpoint(w, val, &format!("{path}.source"), false).map(|(spec, _)| spec),
            "sink" => {
                out.sink = parse_endpoint(w, val, &format!("{path}.sink"), true).map(|(spec, push)| SinkSpec {
                    kind: spec.kind,
                    file_path: spec.file_path,
                    file_format: spec.file_format,
                    repo_id: spec.repo_id,
                    config_name: spec.config_name,
                    splits: spec.splits,
                    push_to_hub: push,
                })
            }
            "transforms" => out.transforms = parse_transforms(w, val, &format!("{path}.transforms")),
            other => w.warn(&format!("{path}.{other}"), "unknown key ignored"),
        }
    }
    out
}

/// Shared source/sink walker; returns the spec plus the push_to_hub flag.
fn parse_endpoint(w: &mut Walk, v: &Value, path: &str, is_sink: bool) -> Option<(SourceSpec, bool)> {
    let map = w.expect_map(v, path)?;
    let mut spec = SourceSpec {
        kind: SourceKind::Disk,
        file_path: None,
        file_format: None,
        repo_id: None,
        config_name: None,
        splits: Vec::new(),
        streaming: false,
    };
    let mut push_to_hub = false;
    let mut kind_seen = false;
    for (key, val) in map {
        let kp = format!("{path}.{key}");
        match key.as_str() {
            "type" | "kind" => {
                let Some(s) = w.expect_str(val, &kp) else { continue };
                kind_seen = true;
                match s.as_str() {
                    "hf" => spec.kind = SourceKind::Hf,
                    "disk" => spec.kind = SourceKind::Disk,
                    "none" => spec.kind = SourceKind::None,
                    other => match FileFormat::from_str(other) {
                        // A bare format name means a disk endpoint in that format.
                        Some(fmt) => {
                            spec.kind = SourceKind::Disk;
                            spec.file_format = Some(fmt);
                        }
                        None => w.err(&kp, format!("unknown source type {other:?}")),
                    },
                }
            }
            "file_path" => spec.file_path = w.expect_str(val, &kp),
            "file_format" => {
                if let Some(s) = w.expect_str(val, &kp) {
                    match FileFormat::from_str(&s) {
                        Some(f) => spec.file_format = Some(f),
                        None => w.err(&kp, format!("unknown file_format {s:?}")),
                    }
                }
            }
            "repo_id" => spec.repo_id = w.expect_str(val, &kp),
            "config_name" => spec.config_name = w.expect_str(val, &kp),
            "split" | "splits" => spec.splits = w.str_list(val, &kp),
            "streaming" => spec.streaming = w.expect_bool(val, &kp).unwrap_or(false),
            "push_to_hub" => {
                push_to_hub = w.expect_bool(val, &kp).unwrap_or(false);
                if push_to_hub {
                    w.warn(&kp, "hub push disabled; records are written locally");
                }
            }
            "token" | "private" => {
                w.warn(&kp, "hub credential keys are parsed and ignored");
            }
            other => w.warn(&format!("{path}.{other}"), "unknown key ignored"),
        }
    }
    if !kind_seen {
        // Infer: repo_id implies hf, file_path implies disk.
        if spec.repo_id.is_some() {
            spec.kind = SourceKind::Hf;
        }
    }
    if spec.file_format.is_none() {
        if let Some(p) = &spec.file_path {
            spec.file_format = FileFormat::from_path(p);
        }
    }
    match spec.kind {
        SourceKind::Disk => {
            if spec.file_path.is_none() {
                w.err(path, "disk endpoint requires file_path");
            }
            if spec.file_format.is_none() {
                w.err(path, "disk endpoint requires file_format");
            }
        }
        SourceKind::Hf => {
            if spec.repo_id.is_none() {
                w.err(path, "hf endpoint requires repo_id");
            }
        }
        SourceKind::None => {
            if is_sink {
                w.err(path, "sink type cannot be none");
            }
        }
    }
    Some((spec, push_to_hub))
}

fn parse_transforms(w: &mut Walk, v: &Value, path: &str) -> Vec<TransformSpec> {
    let Some(items) = v.as_array() else {
        w.err(path, "expected a list of transforms");
        return Vec::new();
    };
    let mut out = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let ip = format!("{path}[{i}]");
        if let Some(t) = parse_transform(w, item, &ip) {
            out.push(t);
        }
    }
    out
}

fn parse_transform(w: &mut Walk, v: &Value, path: &str) -> Option<TransformSpec> {
    let map = w.expect_map(v, path)?;
    let kind = map
        .get("kind")
        .or_else(|| map.get("transform"))
        .and_then(|k| k.as_str())
        .map(String::from);
    let Some(kind) = kind else {
        w.err(path, "transform entry needs a kind");
        return None;
    };
    // Parameters may sit under `params` or inline beside `kind`.
    let params: serde_json::Map<String, Value> = match map.get("params") {
        Some(Value::Object(p)) => p.clone(),
        _ => map
            .iter()
            .filter(|(k, _)| !matches!(k.as_str(), "kind" | "transform" | "params"))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    };
    match kind.as_str() {
        "rename_fields" | "RenameFieldsTransform" | "RenameFields" => {
            let mut mapping = IndexMap::new();
            if let Some(Value::Object(m)) = params.get("mapping") {
                for (old, new) in m {
                    if let Some(new) = w.expect_str(new, &format!("{path}.mapping.{old}")) {
                        mapping.insert(old.clone(), new);
                    }
                }
            } else {
                w.err(&format!("{path}.mapping"), "rename_fields requires a mapping");
            }
            let overwrite = params
                .get("overwrite")
                .and_then(|b| b.as_bool())
                .unwrap_or(false);
            Some(TransformSpec::RenameFields { mapping, overwrite })
        }
        "combine_records" | "CombineRecords" => {
            let num_records = params
                .get("num_records")
                .and_then(|n| n.as_u64())
                .unwrap_or(2) as usize;
            if num_records < 2 {
                w.err(&format!("{path}.num_records"), "combine_records requires num_records >= 2");
            }
            let shift = params.get("shift").and_then(|n| n.as_u64()).unwrap_or(1) as usize;
            if shift < 1 {
                w.err(&format!("{path}.shift"), "combine_records requires shift >= 1");
            }
            let mut field_strategies = IndexMap::new();
            if let Some(Value::Object(m)) = params.get("field_strategies") {
                for (field, strat) in m {
                    let sp = format!("{path}.field_strategies.{field}");
                    match parse_strategy(strat) {
                        Some(s) => {
                            field_strategies.insert(field.clone(), s);
                        }
                        None => w.err(&sp, "unknown field strategy (expected first, last, or join)"),
                    }
                }
            }
            Some(TransformSpec::CombineRecords {
                num_records: num_records.max(2),
                shift: shift.max(1),
                field_strategies,
            })
        }
        "skip_records" | "SkipRecords" => {
            let from_start = params.get("from_start").and_then(|n| n.as_u64()).unwrap_or(0) as usize;
            let from_end = params.get("from_end").and_then(|n| n.as_u64()).unwrap_or(0) as usize;
            Some(TransformSpec::SkipRecords { from_start, from_end })
        }
        other => {
            w.err(path, format!("unknown transform kind {other:?}"));
            None
        }
    }
}

fn parse_strategy(v: &Value) -> Option<FieldStrategy> {
    match v {
        Value::String(s) => match s.as_str() {
            "first" => Some(FieldStrategy::First),
            "last" => Some(FieldStrategy::Last),
            "join" => Some(FieldStrategy::Join("\n".to_string())),
            _ => None,
        },
        Value::Object(m) => {
            let delim = m.get("join")?.as_str()?;
            Some(FieldStrategy::Join(delim.to_string()))
        }
        _ => None,
    }
}

fn parse_graph(w: &mut Walk, v: &Value) -> GraphConfig {
    let path = "graph_config";
    let mut out = GraphConfig {
        settings: GraphSettings::default(),
        nodes: IndexMap::new(),
        edges: Vec::new(),
    };
    let Some(map) = w.expect_map(v, path) else {
        return out;
    };
    for (key, val) in map {
        let kp = format!("{path}.{key}");
        match key.as_str() {
            "chat_conversation" => {
                if let Some(s) = w.expect_str(val, &kp) {
                    match s.as_str() {
                        "singleturn" => out.settings.chat_conversation = ChatMode::SingleTurn,
                        "multiturn" => out.settings.chat_conversation = ChatMode::MultiTurn,
                        other => w.err(&kp, format!("chat_conversation must be singleturn or multiturn, got {other:?}")),
                    }
                }
            }
            "chat_history_window_size" => {
                if let Some(n) = w.expect_usize(val, &kp) {
                    if n == 0 {
                        w.err(&kp, "chat_history_window_size must be positive");
                    } else {
                        out.settings.chat_history_window_size = n;
                    }
                }
            }
            "loop_budget" => {
                if let Some(n) = w.expect_usize(val, &kp) {
                    if n == 0 {
                        w.err(&kp, "loop_budget must be positive");
                    } else {
                        out.settings.loop_budget = Some(n);
                    }
                }
            }
            "nodes" => {
                if let Some(nodes) = w.expect_map(val, &kp) {
                    for (name, spec) in nodes.clone() {
                        let node = parse_node(w, &spec, &format!("{kp}.{name}"));
                        out.nodes.insert(name, node);
                    }
                }
            }
            "edges" => {
                if let Some(edges) = val.as_array() {
                    for (i, e) in edges.iter().enumerate() {
                        if let Some(edge) = parse_edge(w, e, &format!("{kp}[{i}]")) {
                            out.edges.push(edge);
                        }
                    }
                } else {
                    w.err(&kp, "expected a list of edges");
                }
            }
            other => w.warn(&format!("{path}.{other}"), "unknown key ignored"),
        }
    }
    out
}

fn parse_node(w: &mut Walk, v: &Value, path: &str) -> NodeSpec {
    let mut node = NodeSpec::default();
    let Some(map) = w.expect_map(v, path) else {
        return node;
    };
    let mut node_type_seen = false;
    for (key, val) in map {
        let kp = format!("{path}.{key}");
        match key.as_str() {
            "node_type" => {
                node_type_seen = true;
                if let Some(s) = w.expect_str(val, &kp) {
                    match s.as_str() {
                        "llm" => node.node_type = NodeType::Llm,
                        "multi_llm" => node.node_type = NodeType::MultiLlm,
                        "weighted_sampler" => node.node_type = NodeType::WeightedSampler,
                        "lambda" => node.node_type = NodeType::Lambda,
                        "agent" => node.node_type = NodeType::Agent,
                        "subgraph" => node.node_type = NodeType::Subgraph,
                        other => w.err(&kp, format!("unknown node_type {other:?}")),
                    }
                }
            }
            "prompt" => node.prompt = parse_prompt(w, val, &kp),
            "model" => node.model = parse_model(w, val, &kp),
            "models" => {
                if let Some(items) = val.as_array() {
                    for (i, m) in items.iter().enumerate() {
                        if let Some(spec) = parse_model(w, m, &format!("{kp}[{i}]")) {
                            node.models.push(spec);
                        }
                    }
                } else {
                    w.err(&kp, "expected a list of models");
                }
            }
            "output_keys" => node.output_keys = w.str_list(val, &kp),
            "lambda" => node.lambda = w.expect_str(val, &kp),
            "tools" => node.tools = w.str_list(val, &kp),
            "inject_system_messages" => {
                if let Some(m) = w.expect_map(val, &kp) {
                    for (turn, text) in m {
                        match turn.parse::<usize>() {
                            Ok(t) => {
                                if let Some(s) = w.expect_str(text, &format!("{kp}.{turn}")) {
                                    node.inject_system_messages.insert(t, s);
                                }
                            }
                            Err(_) => w.err(&format!("{kp}.{turn}"), "turn index must be an integer"),
                        }
                    }
                }
            }
            "structured_output" => node.structured_output = parse_structured(w, val, &kp),
            "pre_process" => node.pre_process = w.expect_str(val, &kp),
            "post_process" => node.post_process = w.expect_str(val, &kp),
            "sampler" => {
                if let Some(items) = val.as_array() {
                    for (i, c) in items.iter().enumerate() {
                        let cp = format!("{kp}[{i}]");
                        let Some(m) = w.expect_map(c, &cp) else { continue };
                        let Some(value) = m.get("value").cloned() else {
                            w.err(&cp, "sampler choice needs a value");
                            continue;
                        };
                        let weight = m.get("weight").and_then(|x| x.as_f64()).unwrap_or(1.0);
                        node.sampler.push(SamplerChoice { value, weight });
                    }
                } else {
                    w.err(&kp, "expected a list of {value, weight} choices");
                }
            }
            "subgraph" => node.subgraph = w.expect_str(val, &kp),
            "max_turns" => {
                if let Some(n) = w.expect_usize(val, &kp) {
                    if n == 0 {
                        w.err(&kp, "max_turns must be >= 1");
                    } else {
                        node.max_turns = n;
                    }
                }
            }
            other => w.warn(&format!("{path}.{other}"), "unknown key ignored"),
        }
    }
    if !node_type_seen {
        w.err(path, "node is missing node_type");
    }

    // Per-kind structural requirements.
    match node.node_type {
        NodeType::Llm => {
            if node.prompt.is_empty() {
                w.err(path, "llm node requires a prompt");
            }
            if node.model.is_none() {
                w.err(path, "llm node requires a model");
            }
        }
        NodeType::MultiLlm => {
            if node.prompt.is_empty() {
                w.err(path, "multi_llm node requires a prompt");
            }
            if node.models.is_empty() {
                w.err(path, "multi_llm node requires a non-empty models list");
            }
            if node.output_keys.len() != 1 {
                w.err(path, "multi_llm node requires exactly one output key");
            }
        }
        NodeType::WeightedSampler => {
            if node.sampler.is_empty() {
                w.err(path, "weighted_sampler node requires sampler choices");
            }
            let mut sum = 0.0;
            for (i, c) in node.sampler.iter().enumerate() {
                if c.weight < 0.0 || !c.weight.is_finite() {
                    w.err(&format!("{path}.sampler[{i}].weight"), "weights must be >= 0");
                }
                sum += c.weight.max(0.0);
            }
            if !node.sampler.is_empty() && sum <= 0.0 {
                w.err(&format!("{path}.sampler"), "weights must sum to > 0");
            }
        }
        NodeType::Lambda => {
            if node.lambda.is_none() {
                w.err(path, "lambda node requires a lambda callable name");
            }
        }
        NodeType::Agent => {
            if node.model.is_none() {
                w.err(path, "agent node requires a model");
            }
            if node.prompt.is_empty() {
                w.err(path, "agent node requires a prompt");
            }
        }
        NodeType::Subgraph => {
            if node.subgraph.is_none() {
                w.err(path, "subgraph node requires a subgraph reference");
            }
        }
    }
    node
}

fn parse_prompt(w: &mut Walk, v: &Value, path: &str) -> Vec<MessageTemplate> {
    let Some(items) = v.as_array() else {
        w.err(path, "prompt must be a list of role-keyed messages");
        return Vec::new();
    };
    let mut out = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let ip = format!("{path}[{i}]");
        let Some(map) = w.expect_map(item, &ip) else { continue };
        if map.len() != 1 {
            w.err(&ip, "prompt message must have exactly one role key");
            continue;
        }
        let (role_name, content) = map.iter().next().unwrap();
        let role = match role_name.as_str() {
            "system" => Role::System,
            "user" => Role::User,
            "assistant" => Role::Assistant,
            other => {
                w.err(&ip, format!("unknown prompt role {other:?}"));
                continue;
            }
        };
        let parts = parse_parts(w, content, &format!("{ip}.{role_name}"));
        out.push(MessageTemplate { role, parts });
    }
    out
}

fn parse_parts(w: &mut Walk, v: &Value, path: &str) -> Vec<PartTemplate> {
    match v {
        Value::String(s) => vec![PartTemplate::Text(s.clone())],
        Value::Array(items) => {
            let mut parts = Vec::new();
            for (i, item) in items.iter().enumerate() {
                let ip = format!("{path}[{i}]");
                let Some(map) = w.expect_map(item, &ip) else { continue };
                let ty = map.get("type").and_then(|t| t.as_str()).unwrap_or("");
                let payload = |key: &str| -> Option<String> {
                    match map.get(key) {
                        Some(Value::String(s)) => Some(s.clone()),
                        // Nested OpenAI form: image_url: {url: ...}
                        Some(Value::Object(m)) => m.get("url").and_then(|u| u.as_str()).map(String::from),
                        _ => None,
                    }
                };
                match ty {
                    "text" => match payload("text") {
                        Some(t) => parts.push(PartTemplate::Text(t)),
                        None => w.err(&ip, "text part needs a text payload"),
                    },
                    "image_url" => match payload("image_url") {
                        Some(u) => parts.push(PartTemplate::ImageUrl(u)),
                        None => w.err(&ip, "image_url part needs an image_url payload"),
                    },
                    "audio_url" => match payload("audio_url") {
                        Some(u) => parts.push(PartTemplate::AudioUrl(u)),
                        None => w.err(&ip, "audio_url part needs an audio_url payload"),
                    },
                    other => w.err(&ip, format!("unknown part type {other:?}")),
                }
            }
            if parts.is_empty() {
                w.err(path, "message must have at least one part");
            }
            parts
        }
        _ => {
            w.err(path, "message content must be text or a list of typed parts");
            Vec::new()
        }
    }
}

fn parse_model(w: &mut Walk, v: &Value, path: &str) -> Option<ModelSpec> {
    let map = w.expect_map(v, path)?;
    let mut name = None;
    let mut parameters = IndexMap::new();
    for (key, val) in map {
        let kp = format!("{path}.{key}");
        match key.as_str() {
            "name" => name = w.expect_str(val, &kp),
            "parameters" => {
                if let Some(params) = w.expect_map(val, &kp) {
                    for (k, v) in params {
                        parameters.insert(k.clone(), v.clone());
                    }
                }
            }
            other => w.warn(&format!("{path}.{other}"), "unknown key ignored"),
        }
    }
    let name = match name {
        Some(n) => n,
        None => {
            w.err(path, "model requires a name");
            return None;
        }
    };
    Some(ModelSpec { name, parameters })
}

fn parse_structured(w: &mut Walk, v: &Value, path: &str) -> Option<StructuredOutputSpec> {
    let map = w.expect_map(v, path)?;
    let enabled = map.get("enabled").and_then(|b| b.as_bool()).unwrap_or(true);
    let schema = match map.get("schema") {
        Some(Value::String(name)) => SchemaRef::Named(name.clone()),
        Some(Value::Object(schema_map)) => {
            let mut fields = Vec::new();
            if let Some(Value::Object(fmap)) = schema_map.get("fields") {
                for (name, fspec) in fmap {
                    let fp = format!("{path}.schema.fields.{name}");
                    if let Some(f) = parse_field_spec(w, name, fspec, &fp) {
                        fields.push(f);
                    }
                }
            } else {
                w.err(&format!("{path}.schema"), "inline schema requires a fields map");
            }
            SchemaRef::Inline(fields)
        }
        _ => {
            w.err(path, "structured_output requires a schema (dotted name or inline fields)");
            return None;
        }
    };
    Some(StructuredOutputSpec { enabled, schema })
}

/// Field spec shared by structured output and schema_config: `type`,
/// optional `description`, plus rule keys.
fn parse_field_spec(w: &mut Walk, name: &str, v: &Value, path: &str) -> Option<FieldSchema> {
    let map = w.expect_map(v, path)?;
    let ty_str = match map.get("type").and_then(|t| t.as_str()) {
        Some(t) => t.to_string(),
        None => {
            w.err(path, "field requires a type");
            return None;
        }
    };
    let field_type = match TypeExpr::parse(&ty_str) {
        Ok(t) => t,
        Err(e) => {
            w.err(&format!("{path}.type"), e);
            return None;
        }
    };
    let mut out = FieldSchema {
        name: name.to_string(),
        field_type,
        description: None,
        rules: Vec::new(),
    };
    for (key, val) in map {
        let kp = format!("{path}.{key}");
        match key.as_str() {
            "type" | "name" => {}
            "description" => out.description = w.expect_str(val, &kp),
            "is_greater_than" => {
                if let Some(n) = w.expect_f64(val, &kp) {
                    out.rules.push(FieldRule::IsGreaterThan(n));
                }
            }
            "is_less_than" => {
                if let Some(n) = w.expect_f64(val, &kp) {
                    out.rules.push(FieldRule::IsLessThan(n));
                }
            }
            "regex" => {
                if let Some(s) = w.expect_str(val, &kp) {
                    out.rules.push(FieldRule::Regex(s));
                }
            }
            "non_empty" => {
                if let Some(b) = w.expect_bool(val, &kp) {
                    out.rules.push(FieldRule::NonEmpty(b));
                }
            }
            other => w.warn(&format!("{path}.{other}"), "unknown key ignored"),
        }
    }
    Some(out)
}

fn parse_edge(w: &mut Walk, v: &Value, path: &str) -> Option<EdgeSpec> {
    let map = w.expect_map(v, path)?;
    let mut edge = EdgeSpec {
        from: String::new(),
        to: None,
        condition: None,
        path_map: IndexMap::new(),
    };
    for (key, val) in map {
        let kp = format!("{path}.{key}");
        match key.as_str() {
            "from" => edge.from = w.expect_str(val, &kp).unwrap_or_default(),
            "to" => edge.to = w.expect_str(val, &kp),
            "condition" => edge.condition = w.expect_str(val, &kp),
            "path_map" => {
                if let Some(m) = w.expect_map(val, &kp) {
                    for (label, target) in m {
                        if let Some(t) = w.expect_str(target, &format!("{kp}.{label}")) {
                            edge.path_map.insert(label.clone(), t);
                        }
                    }
                }
            }
            other => w.warn(&format!("{path}.{other}"), "unknown key ignored"),
        }
    }
    if edge.from.is_empty() {
        w.err(path, "edge requires a from endpoint");
    }
    match (&edge.to, &edge.condition) {
        (Some(_), Some(_)) => w.err(path, "edge sets both to and condition"),
        (None, None) => w.err(path, "edge needs either to or condition+path_map"),
        (None, Some(_)) if edge.path_map.is_empty() => {
            w.err(path, "conditional edge requires a path_map")
        }
        _ => {}
    }
    if edge.to.is_some() && !edge.path_map.is_empty() {
        w.err(path, "path_map is only valid on conditional edges");
    }
    Some(edge)
}

fn parse_output(w: &mut Walk, v: &Value) -> OutputConfig {
    let path = "output_config";
    let mut out = OutputConfig {
        output_map: IndexMap::new(),
        generator: None,
    };
    let Some(map) = w.expect_map(v, path) else {
        return out;
    };
    for (key, val) in map {
        let kp = format!("{path}.{key}");
        match key.as_str() {
            "output_map" => {
                let Some(fields) = w.expect_map(val, &kp) else { continue };
                for (field, spec) in fields {
                    let fp = format!("{kp}.{field}");
                    let Some(m) = w.expect_map(spec, &fp) else { continue };
                    let from = m.get("from");
                    let value = m.get("value");
                    let transform = m.get("transform");
                    let set = [from.is_some(), value.is_some(), transform.is_some()]
                        .iter()
                        .filter(|b| **b)
                        .count();
                    if set != 1 {
                        w.err(&fp, "output field must set exactly one of from/value/transform");
                        continue;
                    }
                    for k in m.keys() {
                        if !matches!(k.as_str(), "from" | "value" | "transform") {
                            w.warn(&format!("{fp}.{k}"), "unknown key ignored");
                        }
                    }
                    let source = if let Some(f) = from {
                        match w.expect_str(f, &format!("{fp}.from")) {
                            Some(s) => OutputFieldSource::From(s),
                            None => continue,
                        }
                    } else if let Some(t) = transform {
                        match w.expect_str(t, &format!("{fp}.transform")) {
                            Some(s) => OutputFieldSource::Transform(s),
                            None => continue,
                        }
                    } else {
                        OutputFieldSource::Value(value.cloned().unwrap_or(Value::Null))
                    };
                    out.output_map.insert(field.clone(), source);
                }
            }
            "generator" => out.generator = w.expect_str(val, &kp),
            other => w.warn(&format!("{path}.{other}"), "unknown key ignored"),
        }
    }
    if out.output_map.is_empty() && out.generator.is_none() {
        w.err(path, "output_config requires an output_map or generator");
    }
    out
}

fn parse_schema(w: &mut Walk, v: &Value) -> SchemaConfig {
    let path = "schema_config";
    let mut out = SchemaConfig {
        schema: None,
        fields: Vec::new(),
    };
    let Some(map) = w.expect_map(v, path) else {
        return out;
    };
    for (key, val) in map {
        let kp = format!("{path}.{key}");
        match key.as_str() {
            "schema" => out.schema = w.expect_str(val, &kp),
            "fields" => {
                let Some(items) = val.as_array() else {
                    w.err(&kp, "fields must be a list");
                    continue;
                };
                for (i, item) in items.iter().enumerate() {
                    let ip = format!("{kp}[{i}]");
                    let Some(m) = w.expect_map(item, &ip) else { continue };
                    let Some(name) = m.get("name").and_then(|n| n.as_str()) else {
                        w.err(&ip, "field requires a name");
                        continue;
                    };
                    if let Some(f) = parse_field_spec(w, name, item, &ip) {
                        out.fields.push(f);
                    }
                }
            }
            other => w.warn(&format!("{path}.{other}"), "unknown key ignored"),
        }
    }
    if out.schema.is_some() && !out.fields.is_empty() {
        w.err(path, "schema_config sets both schema and fields");
    }
    if out.schema.is_none() && out.fields.is_empty() {
        w.err(path, "schema_config needs schema or fields");
    }
    out
}

fn parse_quality(w: &mut Walk, v: &Value) -> QualityConfig {
    let path = "quality_config";
    let mut out = QualityConfig::default();
    let Some(map) = w.expect_map(v, path) else {
        return out;
    };
    for (key, val) in map {
        let kp = format!("{path}.{key}");
        match key.as_str() {
            "conversation_key" => {
                if let Some(s) = w.expect_str(val, &kp) {
                    out.conversation_key = s;
                }
            }
            "judge_model" => out.judge_model = w.expect_str(val, &kp),
            "threshold" => {
                if let Some(n) = w.expect_f64(val, &kp) {
                    out.threshold = n;
                }
            }
            "min_chars" => {
                if let Some(n) = w.expect_usize(val, &kp) {
                    out.rules.min_chars = n;
                }
            }
            "max_chars" => {
                if let Some(n) = w.expect_usize(val, &kp) {
                    out.rules.max_chars = n;
                }
            }
            "repetition_ratio" => {
                if let Some(n) = w.expect_f64(val, &kp) {
                    out.rules.repetition_ratio = n;
                }
            }
            "refusal_phrases" => out.rules.refusal_phrases = w.str_list(val, &kp),
            other => w.warn(&format!("{path}.{other}"), "unknown key ignored"),
        }
    }
    out
}

fn parse_models(w: &mut Walk, v: &Value) -> IndexMap<String, BackendConfig> {
    let path = "model_config";
    let mut out = IndexMap::new();
    let Some(map) = w.expect_map(v, path) else {
        return out;
    };
    for (name, spec) in map {
        let mp = format!("{path}.{name}");
        let Some(m) = w.expect_map(spec, &mp) else { continue };
        let base_url = m.get("base_url").and_then(|u| u.as_str()).map(String::from);
        let style = match m.get("api_style").and_then(|s| s.as_str()) {
            Some("mock") => ApiStyle::Mock,
            Some("openai_chat") => ApiStyle::OpenaiChat,
            Some(other) => {
                w.err(&format!("{mp}.api_style"), format!("unknown api_style {other:?}"));
                continue;
            }
            None => {
                if base_url.is_some() {
                    ApiStyle::OpenaiChat
                } else {
                    ApiStyle::Mock
                }
            }
        };
        let mut cfg = match style {
            ApiStyle::Mock => BackendConfig::mock(name.clone()),
            ApiStyle::OpenaiChat => {
                let Some(url) = base_url.clone() else {
                    w.err(&mp, "openai_chat backend requires base_url");
                    continue;
                };
                BackendConfig::openai_chat(name.clone(), url)
            }
        };
        for (key, val) in m {
            let kp = format!("{mp}.{key}");
            match key.as_str() {
                "base_url" | "api_style" => {}
                "auth_env" => cfg.auth_env = w.expect_str(val, &kp),
                "supports_native_schema" => {
                    cfg.supports_native_schema = w.expect_bool(val, &kp).unwrap_or(false)
                }
                "max_retries" => {
                    if let Some(n) = w.expect_usize(val, &kp) {
                        cfg.max_retries = n as u32;
                    }
                }
                "schema_retries" => {
                    if let Some(n) = w.expect_usize(val, &kp) {
                        cfg.schema_retries = n as u32;
                    }
                }
                "timeout_ms" => {
                    if let Some(n) = w.expect_usize(val, &kp) {
                        cfg.timeout_ms = n as u64;
                    }
                }
                "in_flight_cap" => {
                    if let Some(n) = w.expect_usize(val, &kp) {
                        cfg.in_flight_cap = Some(n);
                    }
                }
                "backoff" => {
                    if let Some(b) = w.expect_map(val, &kp) {
                        let mut backoff = Backoff::default();
                        if let Some(n) = b.get("initial_ms").and_then(|x| x.as_u64()) {
                            backoff.initial_ms = n;
                        }
                        if let Some(x) = b.get("multiplier").and_then(|x| x.as_f64()) {
                            backoff.multiplier = x;
                        }
                        if let Some(n) = b.get("max_ms").and_then(|x| x.as_u64()) {
                            backoff.max_ms = n;
                        }
                        if backoff.multiplier < 1.0 {
                            w.err(&format!("{kp}.multiplier"), "backoff multiplier must be >= 1");
                        }
                        cfg.backoff = backoff;
                    }
                }
                "mock_latency_ms" => {
                    if let Some(n) = w.expect_usize(val, &kp) {
                        cfg.mock.latency_ms = n as u64;
                    }
                }
                "mock_seed" => {
                    if let Some(n) = w.expect_usize(val, &kp) {
                        cfg.mock.seed = n as u64;
                    }
                }
                "mock_script" => {
                    let Some(items) = val.as_array() else {
                        w.err(&kp, "mock_script must be a list");
                        continue;
                    };
                    for (i, step) in items.iter().enumerate() {
                        let sp = format!("{kp}[{i}]");
                        match step {
                            Value::String(s) => cfg.mock.script.push(MockStep::Text(s.clone())),
                            Value::Object(sm) => {
                                if let Some(code) = sm.get("status").and_then(|c| c.as_u64()) {
                                    cfg.mock.script.push(MockStep::Status(code as u16));
                                } else if let Some(tc) = sm.get("tool_call") {
                                    let name = tc
                                        .get("name")
                                        .and_then(|n| n.as_str())
                                        .unwrap_or("")
                                        .to_string();
                                    let arguments =
                                        tc.get("arguments").cloned().unwrap_or(Value::Object(Default::default()));
                                    cfg.mock.script.push(MockStep::ToolCall { name, arguments });
                                } else if let Some(t) = sm.get("text").and_then(|t| t.as_str()) {
                                    cfg.mock.script.push(MockStep::Text(t.to_string()));
                                } else {
                                    w.err(&sp, "mock step must be text, {status}, or {tool_call}");
                                }
                            }
                            _ => w.err(&sp, "mock step must be text, {status}, or {tool_call}"),
                        }
                    }
                }
                other => w.warn(&format!("{mp}.{other}"), "unknown key ignored"),
            }
        }
        out.insert(name.clone(), cfg);
    }
    out
}
