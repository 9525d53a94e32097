//! Typed pipeline configuration and the YAML parser that produces it.
//!
//! A task file has up to six top-level blocks: `data_config`, `graph_config`
//! (required), `output_config` (required), `schema_config`, `quality_config`,
//! and `model_config`. Parsing collects every violation as a [`Diagnostic`]
//! instead of failing on the first, so one pass reports all problems.

mod parse;
mod rules;
mod value;

pub use parse::{parse_pipeline_config, parse_subgraph_file, ParsedPipeline};
pub use rules::validate_schema_rules;
pub(crate) use rules::check_field_rules as check_field_rules_pub;
pub use value::{resolve_config_path, yaml_to_json};

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde_json::Value;

use crate::backend::BackendConfig;

/// Fully parsed pipeline definition.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Absent entirely only when the YAML had no `data_config`; data-less mode
    /// is a `data_config` with a sink and no source.
    pub data: Option<DataConfig>,
    pub graph: GraphConfig,
    pub output: OutputConfig,
    pub schema: Option<SchemaConfig>,
    pub quality: Option<QualityConfig>,
    /// Backend settings keyed by model name. Models not listed here run on
    /// the deterministic mock backend.
    pub models: IndexMap<String, BackendConfig>,
}

impl PipelineConfig {
    /// Canonical JSON rendering of the whole config tree, used for `$`-path
    /// resolution, serialization, and hashing.
    pub fn to_value(&self) -> Value {
        value::config_to_value(self)
    }

    /// YAML rendering that re-parses to a structurally equal config.
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(&self.to_value()).unwrap_or_default()
    }

    /// Digest of the canonicalized config (keys sorted recursively), stable
    /// across serialization order.
    pub fn config_hash(&self) -> String {
        value::config_hash(self)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataConfig {
    pub source: Option<SourceSpec>,
    pub sink: Option<SinkSpec>,
    pub transforms: Vec<TransformSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Hf,
    Disk,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Json,
    Jsonl,
    Csv,
    Parquet,
}

impl FileFormat {
    pub fn from_str(s: &str) -> Option<FileFormat> {
        match s {
            "json" => Some(FileFormat::Json),
            "jsonl" => Some(FileFormat::Jsonl),
            "csv" => Some(FileFormat::Csv),
            "parquet" => Some(FileFormat::Parquet),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FileFormat::Json => "json",
            FileFormat::Jsonl => "jsonl",
            FileFormat::Csv => "csv",
            FileFormat::Parquet => "parquet",
        }
    }

    pub fn from_path(path: &str) -> Option<FileFormat> {
        let ext = path.rsplit('.').next()?;
        FileFormat::from_str(&ext.to_ascii_lowercase())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub file_path: Option<String>,
    pub file_format: Option<FileFormat>,
    pub repo_id: Option<String>,
    pub config_name: Option<String>,
    pub splits: Vec<String>,
    pub streaming: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkSpec {
    pub kind: SourceKind,
    pub file_path: Option<String>,
    pub file_format: Option<FileFormat>,
    pub repo_id: Option<String>,
    pub config_name: Option<String>,
    pub splits: Vec<String>,
    /// Parsed and honored only as "write locally + warn"; hub push is out of
    /// scope.
    pub push_to_hub: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldStrategy {
    Join(String),
    First,
    Last,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransformSpec {
    RenameFields {
        mapping: IndexMap<String, String>,
        overwrite: bool,
    },
    CombineRecords {
        num_records: usize,
        shift: usize,
        field_strategies: IndexMap<String, FieldStrategy>,
    },
    SkipRecords {
        from_start: usize,
        from_end: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChatMode {
    SingleTurn,
    MultiTurn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSettings {
    pub chat_conversation: ChatMode,
    pub chat_history_window_size: usize,
    /// Per-record cap on node executions; `None` means 4 × node count.
    pub loop_budget: Option<usize>,
}

impl Default for GraphSettings {
    fn default() -> Self {
        GraphSettings {
            chat_conversation: ChatMode::SingleTurn,
            chat_history_window_size: 4,
            loop_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    pub settings: GraphSettings,
    pub nodes: IndexMap<String, NodeSpec>,
    pub edges: Vec<EdgeSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeType {
    Llm,
    MultiLlm,
    WeightedSampler,
    Lambda,
    Agent,
    Subgraph,
}

impl NodeType {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeType::Llm => "llm",
            NodeType::MultiLlm => "multi_llm",
            NodeType::WeightedSampler => "weighted_sampler",
            NodeType::Lambda => "lambda",
            NodeType::Agent => "agent",
            NodeType::Subgraph => "subgraph",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

/// One prompt message template: a role plus ordered typed parts.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageTemplate {
    pub role: Role,
    pub parts: Vec<PartTemplate>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartTemplate {
    Text(String),
    ImageUrl(String),
    AudioUrl(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub parameters: IndexMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerChoice {
    pub value: Value,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SchemaRef {
    /// Dotted name of a schema registered with the binary.
    Named(String),
    Inline(Vec<FieldSchema>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredOutputSpec {
    pub enabled: bool,
    pub schema: SchemaRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub node_type: NodeType,
    pub prompt: Vec<MessageTemplate>,
    pub model: Option<ModelSpec>,
    pub models: Vec<ModelSpec>,
    pub output_keys: Vec<String>,
    pub lambda: Option<String>,
    pub tools: Vec<String>,
    pub inject_system_messages: BTreeMap<usize, String>,
    pub structured_output: Option<StructuredOutputSpec>,
    pub pre_process: Option<String>,
    pub post_process: Option<String>,
    pub sampler: Vec<SamplerChoice>,
    pub subgraph: Option<String>,
    pub max_turns: usize,
}

impl Default for NodeSpec {
    fn default() -> Self {
        NodeSpec {
            node_type: NodeType::Llm,
            prompt: Vec::new(),
            model: None,
            models: Vec::new(),
            output_keys: Vec::new(),
            lambda: None,
            tools: Vec::new(),
            inject_system_messages: BTreeMap::new(),
            structured_output: None,
            pre_process: None,
            post_process: None,
            sampler: Vec::new(),
            subgraph: None,
            max_turns: 8,
        }
    }
}

pub const START_NODE: &str = "START";
pub const END_NODE: &str = "END";

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSpec {
    pub from: String,
    pub to: Option<String>,
    pub condition: Option<String>,
    pub path_map: IndexMap<String, String>,
}

impl EdgeSpec {
    pub fn simple(from: &str, to: &str) -> EdgeSpec {
        EdgeSpec {
            from: from.to_string(),
            to: Some(to.to_string()),
            condition: None,
            path_map: IndexMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldRule {
    IsGreaterThan(f64),
    IsLessThan(f64),
    Regex(String),
    NonEmpty(bool),
}

impl FieldRule {
    pub fn name(&self) -> &'static str {
        match self {
            FieldRule::IsGreaterThan(_) => "is_greater_than",
            FieldRule::IsLessThan(_) => "is_less_than",
            FieldRule::Regex(_) => "regex",
            FieldRule::NonEmpty(_) => "non_empty",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSchema {
    pub name: String,
    pub field_type: crate::typeexpr::TypeExpr,
    pub description: Option<String>,
    pub rules: Vec<FieldRule>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaConfig {
    /// Dotted name of a registered validator; mutually exclusive with fields.
    pub schema: Option<String>,
    pub fields: Vec<FieldSchema>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutputFieldSource {
    From(String),
    Value(Value),
    Transform(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub output_map: IndexMap<String, OutputFieldSource>,
    pub generator: Option<String>,
}

/// Thresholds for the heuristic quality stage.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicRules {
    pub min_chars: usize,
    pub max_chars: usize,
    /// Max 4-gram frequency ratio above which text counts as repetitive.
    pub repetition_ratio: f64,
    pub refusal_phrases: Vec<String>,
}

impl Default for HeuristicRules {
    fn default() -> Self {
        HeuristicRules {
            min_chars: 8,
            max_chars: 16384,
            repetition_ratio: 0.3,
            refusal_phrases: vec![
                "i cannot assist".to_string(),
                "i can't assist".to_string(),
                "i cannot help with".to_string(),
                "as an ai language model".to_string(),
                "i'm sorry, but i can't".to_string(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityConfig {
    /// Record field holding the conversation to judge; falls back to the
    /// record's chat history when the field is absent.
    pub conversation_key: String,
    pub judge_model: Option<String>,
    /// Records scoring below this are dropped.
    pub threshold: f64,
    pub rules: HeuristicRules,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            conversation_key: "conversation".to_string(),
            judge_model: None,
            threshold: 3.0,
            rules: HeuristicRules::default(),
        }
    }
}
