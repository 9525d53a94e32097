//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by pipeline loading, compilation, and execution.
#[derive(Debug, Error)]
pub enum GraspError {
    #[error("source not found: {0}")]
    SourceNotFound(String),

    #[error("invalid source: {0}")]
    InvalidSource(String),

    #[error("row {ordinal} could not be decoded: {message}")]
    RowDecode { ordinal: u64, message: String },

    #[error("sink error: {0}")]
    Sink(String),

    #[error("media load failed for {what}: {message}")]
    MediaLoad { what: String, message: String },

    #[error("backend {backend} exhausted after {attempts} attempts (last status {last_status})")]
    BackendExhausted {
        backend: String,
        attempts: u32,
        last_status: u16,
    },

    #[error("backend {backend} rejected request with status {status}: {message}")]
    BackendRejected {
        backend: String,
        status: u16,
        message: String,
    },

    #[error("unknown backend for model {0}")]
    UnknownBackend(String),

    #[error("structured output failed after {retries} schema retries: {last_error}")]
    StructuredOutput { retries: u32, last_error: String },

    #[error("node {node}: missing template key {key}")]
    MissingKey { node: String, key: String },

    #[error("node {node}: callable returned undeclared output key {key}")]
    UndeclaredOutput { node: String, key: String },

    #[error("node {node}: {message}")]
    NodeFailed { node: String, message: String },

    #[error("router at {node} produced unknown label {label}")]
    Routing { node: String, label: String },

    #[error("loop budget {budget} exceeded at node {node}")]
    LoopBudgetExceeded { node: String, budget: usize },

    #[error("agent {node} hit max_turns {max_turns} without a final answer")]
    AgentBudgetExceeded { node: String, max_turns: usize },

    #[error("output map failed for field {field}: {message}")]
    OutputMap { field: String, message: String },

    #[error("schema validation failed: {}", reasons.join("; "))]
    SchemaViolation { reasons: Vec<String> },

    #[error("config path not found: segment {0}")]
    PathNotFound(String),

    #[error("config path {0} does not resolve to a scalar")]
    NonScalarPath(String),

    #[error("resume failed: {0}")]
    Resume(String),

    #[error("conversation invalid at index {index}: {message}")]
    Conversion { index: usize, message: String },

    #[error("cannot merge trees: {0}")]
    Merge(String),

    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Other(String),
}

impl GraspError {
    /// Short machine-readable tag used in failure logs.
    pub fn kind(&self) -> &'static str {
        match self {
            GraspError::SourceNotFound(_) => "source_not_found",
            GraspError::InvalidSource(_) => "invalid_source",
            GraspError::RowDecode { .. } => "row_decode",
            GraspError::Sink(_) => "sink",
            GraspError::MediaLoad { .. } => "media_load",
            GraspError::BackendExhausted { .. } => "backend_exhausted",
            GraspError::BackendRejected { .. } => "backend_rejected",
            GraspError::UnknownBackend(_) => "unknown_backend",
            GraspError::StructuredOutput { .. } => "structured_output",
            GraspError::MissingKey { .. } => "missing_key",
            GraspError::UndeclaredOutput { .. } => "undeclared_output",
            GraspError::NodeFailed { .. } => "node_failed",
            GraspError::Routing { .. } => "routing",
            GraspError::LoopBudgetExceeded { .. } => "loop_budget_exceeded",
            GraspError::AgentBudgetExceeded { .. } => "agent_budget_exceeded",
            GraspError::OutputMap { .. } => "output_map",
            GraspError::SchemaViolation { .. } => "schema",
            GraspError::PathNotFound(_) => "path_not_found",
            GraspError::NonScalarPath(_) => "non_scalar_path",
            GraspError::Resume(_) => "resume",
            GraspError::Conversion { .. } => "conversion",
            GraspError::Merge(_) => "merge",
            GraspError::InvalidPipeline(_) => "invalid_pipeline",
            GraspError::Io(_) => "io",
            GraspError::Other(_) => "other",
        }
    }
}

pub type Result<T> = std::result::Result<T, GraspError>;
