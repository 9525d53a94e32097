//! Canonical JSON view of a config: `$`-path resolution, serialization, and
//! hashing all operate on this one rendering.

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::backend::{ApiStyle, BackendConfig, MockStep};
use crate::diag::Diagnostic;
use crate::error::{GraspError, Result};

use super::*;

/// Convert parsed YAML into JSON, preserving key order. Non-string keys are
/// stringified when scalar, otherwise diagnosed.
pub fn yaml_to_json(v: &serde_yaml::Value, diags: &mut Vec<Diagnostic>, path: &str) -> Value {
    match v {
        serde_yaml::Value::Null => Value::Null,
        serde_yaml::Value::Bool(b) => Value::Bool(*b),
        serde_yaml::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Value::from(i)
            } else if let Some(u) = n.as_u64() {
                Value::from(u)
            } else {
                serde_json::Number::from_f64(n.as_f64().unwrap_or(0.0))
                    .map(Value::Number)
                    .unwrap_or(Value::Null)
            }
        }
        serde_yaml::Value::String(s) => Value::String(s.clone()),
        serde_yaml::Value::Sequence(items) => Value::Array(
            items
                .iter()
                .enumerate()
                .map(|(i, it)| yaml_to_json(it, diags, &format!("{path}[{i}]")))
                .collect(),
        ),
        serde_yaml::Value::Mapping(m) => {
            let mut out = Map::new();
            for (k, val) in m {
                let key = match k {
                    serde_yaml::Value::String(s) => s.clone(),
                    serde_yaml::Value::Number(n) => n.to_string(),
                    serde_yaml::Value::Bool(b) => b.to_string(),
                    other => {
                        diags.push(Diagnostic::error(
                            path,
                            format!("unsupported mapping key {other:?}"),
                        ));
                        continue;
                    }
                };
                let vp = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                out.insert(key, yaml_to_json(val, diags, &vp));
            }
            Value::Object(out)
        }
        serde_yaml::Value::Tagged(t) => yaml_to_json(&t.value, diags, path),
    }
}

/// Resolve a `$`-path such as `$data_config.source.repo_id` to a scalar in
/// the config tree.
pub fn resolve_config_path(config: &PipelineConfig, path: &str) -> Result<Value> {
    let stripped = path
        .strip_prefix('$')
        .ok_or_else(|| GraspError::PathNotFound(path.to_string()))?;
    let tree = config.to_value();
    let mut cur = &tree;
    for segment in stripped.split('.') {
        cur = cur
            .get(segment)
            .ok_or_else(|| GraspError::PathNotFound(segment.to_string()))?;
    }
    match cur {
        Value::Object(_) | Value::Array(_) => Err(GraspError::NonScalarPath(path.to_string())),
        scalar => Ok(scalar.clone()),
    }
}

/// sha256 over the canonicalized (recursively key-sorted) config tree.
pub fn config_hash(config: &PipelineConfig) -> String {
    fn canonicalize(v: &Value) -> Value {
        match v {
            Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                let mut out = Map::new();
                for k in keys {
                    out.insert(k.clone(), canonicalize(&m[k]));
                }
                Value::Object(out)
            }
            Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
            other => other.clone(),
        }
    }
    let canon = canonicalize(&config.to_value());
    let bytes = serde_json::to_vec(&canon).unwrap_or_default();
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub(super) fn config_to_value(c: &PipelineConfig) -> Value {
    let mut root = Map::new();
    if let Some(data) = &c.data {
        root.insert("data_config".to_string(), data_to_value(data));
    }
    root.insert("graph_config".to_string(), graph_to_value(&c.graph));
    root.insert("output_config".to_string(), output_to_value(&c.output));
    if let Some(schema) = &c.schema {
        root.insert("schema_config".to_string(), schema_to_value(schema));
    }
    if let Some(q) = &c.quality {
        root.insert("quality_config".to_string(), quality_to_value(q));
    }
    if !c.models.is_empty() {
        let mut m = Map::new();
        for (name, cfg) in &c.models {
            m.insert(name.clone(), backend_to_value(cfg));
        }
        root.insert("model_config".to_string(), Value::Object(m));
    }
    Value::Object(root)
}

fn endpoint_to_value(
    kind: SourceKind,
    file_path: &Option<String>,
    file_format: &Option<FileFormat>,
    repo_id: &Option<String>,
    config_name: &Option<String>,
    splits: &[String],
    streaming: Option<bool>,
    push_to_hub: Option<bool>,
) -> Value {
    let mut m = Map::new();
    let kind_str = match kind {
        SourceKind::Hf => "hf",
        SourceKind::Disk => "disk",
        SourceKind::None => "none",
    };
    m.insert("type".to_string(), Value::String(kind_str.to_string()));
    if let Some(p) = file_path {
        m.insert("file_path".to_string(), Value::String(p.clone()));
    }
    if let Some(f) = file_format {
        m.insert("file_format".to_string(), Value::String(f.as_str().to_string()));
    }
    if let Some(r) = repo_id {
        m.insert("repo_id".to_string(), Value::String(r.clone()));
    }
    if let Some(cn) = config_name {
        m.insert("config_name".to_string(), Value::String(cn.clone()));
    }
    if !splits.is_empty() {
        m.insert(
            "split".to_string(),
            Value::Array(splits.iter().map(|s| Value::String(s.clone())).collect()),
        );
    }
    if let Some(true) = streaming {
        m.insert("streaming".to_string(), Value::Bool(true));
    }
    if let Some(true) = push_to_hub {
        m.insert("push_to_hub".to_string(), Value::Bool(true));
    }
    Value::Object(m)
}

fn data_to_value(d: &DataConfig) -> Value {
    let mut m = Map::new();
    if let Some(s) = &d.source {
        m.insert(
            "source".to_string(),
            endpoint_to_value(
                s.kind,
                &s.file_path,
                &s.file_format,
                &s.repo_id,
                &s.config_name,
                &s.splits,
                Some(s.streaming),
                None,
            ),
        );
    }
    if let Some(s) = &d.sink {
        m.insert(
            "sink".to_string(),
            endpoint_to_value(
                s.kind,
                &s.file_path,
                &s.file_format,
                &s.repo_id,
                &s.config_name,
                &s.splits,
                None,
                Some(s.push_to_hub),
            ),
        );
    }
    if !d.transforms.is_empty() {
        m.insert(
            "transforms".to_string(),
            Value::Array(d.transforms.iter().map(transform_to_value).collect()),
        );
    }
    Value::Object(m)
}

fn transform_to_value(t: &TransformSpec) -> Value {
    let mut m = Map::new();
    match t {
        TransformSpec::RenameFields { mapping, overwrite } => {
            m.insert("kind".to_string(), Value::String("rename_fields".to_string()));
            let mut params = Map::new();
            let mut map = Map::new();
            for (old, new) in mapping {
                map.insert(old.clone(), Value::String(new.clone()));
            }
            params.insert("mapping".to_string(), Value::Object(map));
            params.insert("overwrite".to_string(), Value::Bool(*overwrite));
            m.insert("params".to_string(), Value::Object(params));
        }
        TransformSpec::CombineRecords {
            num_records,
            shift,
            field_strategies,
        } => {
            m.insert("kind".to_string(), Value::String("combine_records".to_string()));
            let mut params = Map::new();
            params.insert("num_records".to_string(), Value::from(*num_records));
            params.insert("shift".to_string(), Value::from(*shift));
            let mut strategies = Map::new();
            for (field, s) in field_strategies {
                let sv = match s {
                    FieldStrategy::First => Value::String("first".to_string()),
                    FieldStrategy::Last => Value::String("last".to_string()),
                    FieldStrategy::Join(d) => {
                        let mut j = Map::new();
                        j.insert("join".to_string(), Value::String(d.clone()));
                        Value::Object(j)
                    }
                };
                strategies.insert(field.clone(), sv);
            }
            params.insert("field_strategies".to_string(), Value::Object(strategies));
            m.insert("params".to_string(), Value::Object(params));
        }
        TransformSpec::SkipRecords { from_start, from_end } => {
            m.insert("kind".to_string(), Value::String("skip_records".to_string()));
            let mut params = Map::new();
            params.insert("from_start".to_string(), Value::from(*from_start));
            params.insert("from_end".to_string(), Value::from(*from_end));
            m.insert("params".to_string(), Value::Object(params));
        }
    }
    Value::Object(m)
}

fn graph_to_value(g: &GraphConfig) -> Value {
    let mut m = Map::new();
    let mode = match g.settings.chat_conversation {
        ChatMode::SingleTurn => "singleturn",
        ChatMode::MultiTurn => "multiturn",
    };
    m.insert("chat_conversation".to_string(), Value::String(mode.to_string()));
    m.insert(
        "chat_history_window_size".to_string(),
        Value::from(g.settings.chat_history_window_size),
    );
    if let Some(b) = g.settings.loop_budget {
        m.insert("loop_budget".to_string(), Value::from(b));
    }
    let mut nodes = Map::new();
    for (name, spec) in &g.nodes {
        nodes.insert(name.clone(), node_to_value(spec));
    }
    m.insert("nodes".to_string(), Value::Object(nodes));
    m.insert(
        "edges".to_string(),
        Value::Array(g.edges.iter().map(edge_to_value).collect()),
    );
    Value::Object(m)
}

fn node_to_value(n: &NodeSpec) -> Value {
    let mut m = Map::new();
    m.insert("node_type".to_string(), Value::String(n.node_type.as_str().to_string()));
    if !n.output_keys.is_empty() {
        m.insert(
            "output_keys".to_string(),
            Value::Array(n.output_keys.iter().map(|k| Value::String(k.clone())).collect()),
        );
    }
    if !n.prompt.is_empty() {
        let msgs: Vec<Value> = n
            .prompt
            .iter()
            .map(|msg| {
                let content = if msg.parts.len() == 1 {
                    match &msg.parts[0] {
                        PartTemplate::Text(t) => Value::String(t.clone()),
                        other => part_to_value(other),
                    }
                } else {
                    Value::Array(msg.parts.iter().map(part_to_value).collect())
                };
                let mut mm = Map::new();
                mm.insert(msg.role.as_str().to_string(), content);
                Value::Object(mm)
            })
            .collect();
        m.insert("prompt".to_string(), Value::Array(msgs));
    }
    if let Some(model) = &n.model {
        m.insert("model".to_string(), model_to_value(model));
    }
    if !n.models.is_empty() {
        m.insert(
            "models".to_string(),
            Value::Array(n.models.iter().map(model_to_value).collect()),
        );
    }
    if let Some(l) = &n.lambda {
        m.insert("lambda".to_string(), Value::String(l.clone()));
    }
    if !n.tools.is_empty() {
        m.insert(
            "tools".to_string(),
            Value::Array(n.tools.iter().map(|t| Value::String(t.clone())).collect()),
        );
    }
    if !n.inject_system_messages.is_empty() {
        let mut im = Map::new();
        for (turn, text) in &n.inject_system_messages {
            im.insert(turn.to_string(), Value::String(text.clone()));
        }
        m.insert("inject_system_messages".to_string(), Value::Object(im));
    }
    if let Some(so) = &n.structured_output {
        let mut sm = Map::new();
        sm.insert("enabled".to_string(), Value::Bool(so.enabled));
        match &so.schema {
            SchemaRef::Named(name) => {
                sm.insert("schema".to_string(), Value::String(name.clone()));
            }
            SchemaRef::Inline(fields) => {
                let mut fm = Map::new();
                for f in fields {
                    fm.insert(f.name.clone(), field_to_value(f, false));
                }
                let mut sv = Map::new();
                sv.insert("fields".to_string(), Value::Object(fm));
                sm.insert("schema".to_string(), Value::Object(sv));
            }
        }
        m.insert("structured_output".to_string(), Value::Object(sm));
    }
    if let Some(p) = &n.pre_process {
        m.insert("pre_process".to_string(), Value::String(p.clone()));
    }
    if let Some(p) = &n.post_process {
        m.insert("post_process".to_string(), Value::String(p.clone()));
    }
    if !n.sampler.is_empty() {
        let choices: Vec<Value> = n
            .sampler
            .iter()
            .map(|c| {
                let mut cm = Map::new();
                cm.insert("value".to_string(), c.value.clone());
                cm.insert(
                    "weight".to_string(),
                    serde_json::Number::from_f64(c.weight)
                        .map(Value::Number)
                        .unwrap_or(Value::from(0)),
                );
                Value::Object(cm)
            })
            .collect();
        m.insert("sampler".to_string(), Value::Array(choices));
    }
    if let Some(s) = &n.subgraph {
        m.insert("subgraph".to_string(), Value::String(s.clone()));
    }
    if n.node_type == NodeType::Agent && n.max_turns != 8 {
        m.insert("max_turns".to_string(), Value::from(n.max_turns));
    }
    Value::Object(m)
}

fn part_to_value(p: &PartTemplate) -> Value {
    let mut m = Map::new();
    match p {
        PartTemplate::Text(t) => {
            m.insert("type".to_string(), Value::String("text".to_string()));
            m.insert("text".to_string(), Value::String(t.clone()));
        }
        PartTemplate::ImageUrl(u) => {
            m.insert("type".to_string(), Value::String("image_url".to_string()));
            m.insert("image_url".to_string(), Value::String(u.clone()));
        }
        PartTemplate::AudioUrl(u) => {
            m.insert("type".to_string(), Value::String("audio_url".to_string()));
            m.insert("audio_url".to_string(), Value::String(u.clone()));
        }
    }
    Value::Object(m)
}

fn model_to_value(m: &ModelSpec) -> Value {
    let mut out = Map::new();
    out.insert("name".to_string(), Value::String(m.name.clone()));
    if !m.parameters.is_empty() {
        let mut params = Map::new();
        for (k, v) in &m.parameters {
            params.insert(k.clone(), v.clone());
        }
        out.insert("parameters".to_string(), Value::Object(params));
    }
    Value::Object(out)
}

fn edge_to_value(e: &EdgeSpec) -> Value {
    let mut m = Map::new();
    m.insert("from".to_string(), Value::String(e.from.clone()));
    if let Some(to) = &e.to {
        m.insert("to".to_string(), Value::String(to.clone()));
    }
    if let Some(c) = &e.condition {
        m.insert("condition".to_string(), Value::String(c.clone()));
    }
    if !e.path_map.is_empty() {
        let mut pm = Map::new();
        for (label, target) in &e.path_map {
            pm.insert(label.clone(), Value::String(target.clone()));
        }
        m.insert("path_map".to_string(), Value::Object(pm));
    }
    Value::Object(m)
}

fn field_to_value(f: &FieldSchema, with_name: bool) -> Value {
    let mut m = Map::new();
    if with_name {
        m.insert("name".to_string(), Value::String(f.name.clone()));
    }
    m.insert("type".to_string(), Value::String(f.field_type.to_string()));
    if let Some(d) = &f.description {
        m.insert("description".to_string(), Value::String(d.clone()));
    }
    for rule in &f.rules {
        match rule {
            FieldRule::IsGreaterThan(n) => {
                m.insert("is_greater_than".to_string(), number_value(*n));
            }
            FieldRule::IsLessThan(n) => {
                m.insert("is_less_than".to_string(), number_value(*n));
            }
            FieldRule::Regex(p) => {
                m.insert("regex".to_string(), Value::String(p.clone()));
            }
            FieldRule::NonEmpty(b) => {
                m.insert("non_empty".to_string(), Value::Bool(*b));
            }
        }
    }
    Value::Object(m)
}

/// Keep integral rule operands as integers so round-trips stay stable.
fn number_value(n: f64) -> Value {
    if n.fract() == 0.0 && n.abs() < i64::MAX as f64 {
        Value::from(n as i64)
    } else {
        serde_json::Number::from_f64(n).map(Value::Number).unwrap_or(Value::Null)
    }
}

fn output_to_value(o: &OutputConfig) -> Value {
    let mut m = Map::new();
    let mut om = Map::new();
    for (field, source) in &o.output_map {
        let mut fm = Map::new();
        match source {
            OutputFieldSource::From(k) => {
                fm.insert("from".to_string(), Value::String(k.clone()));
            }
            OutputFieldSource::Value(v) => {
                fm.insert("value".to_string(), v.clone());
            }
            OutputFieldSource::Transform(t) => {
                fm.insert("transform".to_string(), Value::String(t.clone()));
            }
        }
        om.insert(field.clone(), Value::Object(fm));
    }
    m.insert("output_map".to_string(), Value::Object(om));
    if let Some(g) = &o.generator {
        m.insert("generator".to_string(), Value::String(g.clone()));
    }
    Value::Object(m)
}

fn schema_to_value(s: &SchemaConfig) -> Value {
    let mut m = Map::new();
    if let Some(name) = &s.schema {
        m.insert("schema".to_string(), Value::String(name.clone()));
    }
    if !s.fields.is_empty() {
        m.insert(
            "fields".to_string(),
            Value::Array(s.fields.iter().map(|f| field_to_value(f, true)).collect()),
        );
    }
    Value::Object(m)
}

fn quality_to_value(q: &QualityConfig) -> Value {
    let mut m = Map::new();
    m.insert(
        "conversation_key".to_string(),
        Value::String(q.conversation_key.clone()),
    );
    if let Some(j) = &q.judge_model {
        m.insert("judge_model".to_string(), Value::String(j.clone()));
    }
    m.insert(
        "threshold".to_string(),
        serde_json::Number::from_f64(q.threshold).map(Value::Number).unwrap_or(Value::from(3)),
    );
    m.insert("min_chars".to_string(), Value::from(q.rules.min_chars));
    m.insert("max_chars".to_string(), Value::from(q.rules.max_chars));
    m.insert(
        "repetition_ratio".to_string(),
        serde_json::Number::from_f64(q.rules.repetition_ratio)
            .map(Value::Number)
            .unwrap_or(Value::Null),
    );
    m.insert(
        "refusal_phrases".to_string(),
        Value::Array(q.rules.refusal_phrases.iter().map(|p| Value::String(p.clone())).collect()),
    );
    Value::Object(m)
}

fn backend_to_value(b: &BackendConfig) -> Value {
    let mut m = Map::new();
    let style = match b.api_style {
        ApiStyle::Mock => "mock",
        ApiStyle::OpenaiChat => "openai_chat",
    };
    m.insert("api_style".to_string(), Value::String(style.to_string()));
    if !b.base_url.is_empty() {
        m.insert("base_url".to_string(), Value::String(b.base_url.clone()));
    }
    if let Some(a) = &b.auth_env {
        m.insert("auth_env".to_string(), Value::String(a.clone()));
    }
    if b.supports_native_schema {
        m.insert("supports_native_schema".to_string(), Value::Bool(true));
    }
    m.insert("max_retries".to_string(), Value::from(b.max_retries));
    if b.mock.latency_ms > 0 {
        m.insert("mock_latency_ms".to_string(), Value::from(b.mock.latency_ms));
    }
    if b.mock.seed != 0 {
        m.insert("mock_seed".to_string(), Value::from(b.mock.seed));
    }
    if !b.mock.script.is_empty() {
        let steps: Vec<Value> = b
            .mock
            .script
            .iter()
            .map(|s| match s {
                MockStep::Text(t) => Value::String(t.clone()),
                MockStep::Status(c) => {
                    let mut sm = Map::new();
                    sm.insert("status".to_string(), Value::from(*c));
                    Value::Object(sm)
                }
                MockStep::ToolCall { name, arguments } => {
                    let mut tc = Map::new();
                    tc.insert("name".to_string(), Value::String(name.clone()));
                    tc.insert("arguments".to_string(), arguments.clone());
                    let mut sm = Map::new();
                    sm.insert("tool_call".to_string(), Value::Object(tc));
                    Value::Object(sm)
                }
            })
            .collect();
        m.insert("mock_script".to_string(), Value::Array(steps));
    }
    Value::Object(m)
}
