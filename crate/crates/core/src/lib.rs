//! Graph-driven synthetic data pipeline engine.
//!
//! A pipeline is declared in YAML as four blocks (`data_config`, `graph_config`,
//! `output_config`, `schema_config`), compiled into an executable DAG of
//! LLM / transform / agent nodes, and driven over a record stream with bounded
//! concurrency, checkpointing, and resume. Final records are shaped by a
//! declarative output map, schema-validated, optionally quality-tagged, and
//! exportable as OASST-style conversation trees for SFT/DPO training data.

pub mod backend;
pub mod config;
pub mod dataio;
pub mod diag;
pub mod engine;
pub mod error;
pub mod graph;
pub mod oasst;
pub mod output;
pub mod quality;
pub mod registry;
pub mod runtime;
pub mod template;
pub mod typeexpr;

pub use config::{parse_pipeline_config, PipelineConfig};
pub use diag::{Diagnostic, Severity};
pub use error::GraspError;
pub use registry::Registry;
