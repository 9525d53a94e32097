//! Parsing and path-resolution checks over the shipped example task configs.

use std::path::PathBuf;

use grasp_core::config::{
    parse_pipeline_config, resolve_config_path, ChatMode, NodeType, SourceKind,
};
use grasp_core::diag::Severity;
use grasp_core::GraspError;

fn tasks_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../tasks")
}

fn fixture(task: &str) -> String {
    std::fs::read_to_string(tasks_dir().join(task).join("config.yaml"))
        .unwrap_or_else(|e| panic!("missing fixture for {task}: {e}"))
}

const ALL_TASKS: &[&str] = &[
    "space_fact",
    "code_validate",
    "pokemon_image",
    "animal_audio",
    "identify_animal",
    "research_agent",
    "structured_answer",
    "evolve",
];

#[test]
fn all_fixtures_parse_without_errors() {
    for task in ALL_TASKS {
        let parsed = parse_pipeline_config(&fixture(task))
            .unwrap_or_else(|diags| panic!("{task} failed: {diags:?}"));
        assert!(
            parsed.diagnostics.iter().all(|d| d.severity != Severity::Error),
            "{task}: {:?}",
            parsed.diagnostics
        );
    }
}

#[test]
fn dataless_fixture_shape() {
    let parsed = parse_pipeline_config(&fixture("space_fact")).unwrap();
    let config = parsed.config;
    let data = config.data.as_ref().unwrap();
    assert!(data.source.is_none(), "data-less: no source");
    assert!(data.sink.is_some());
    assert_eq!(config.graph.nodes.len(), 1);
    assert_eq!(config.graph.edges.len(), 2);
    let node = &config.graph.nodes["generate"];
    assert_eq!(node.node_type, NodeType::Llm);
    assert_eq!(node.output_keys, vec!["response"]);
    assert_eq!(node.model.as_ref().unwrap().name, "gpt-3.5-turbo");
    assert_eq!(config.output.output_map.len(), 1);
    assert_eq!(config.graph.settings.chat_conversation, ChatMode::SingleTurn);
}

#[test]
fn conditional_fixture_shape() {
    let parsed = parse_pipeline_config(&fixture("code_validate")).unwrap();
    let config = parsed.config;
    let source = config.data.as_ref().unwrap().source.as_ref().unwrap();
    assert_eq!(source.kind, SourceKind::Disk);
    let router_edge = config
        .graph
        .edges
        .iter()
        .find(|e| e.condition.is_some())
        .expect("conditional edge");
    assert_eq!(
        router_edge.condition.as_deref(),
        Some("validators.code.RouteBasedOnValidity")
    );
    assert_eq!(router_edge.path_map["END"], "END");
    assert_eq!(router_edge.path_map["generate"], "generate");
    assert_eq!(config.schema.as_ref().unwrap().fields.len(), 3);
}

#[test]
fn hub_sink_keys_warn_but_parse() {
    let parsed = parse_pipeline_config(&fixture("pokemon_image")).unwrap();
    let warnings: Vec<String> = parsed.diagnostics.iter().map(|d| d.to_string()).collect();
    assert!(
        warnings.iter().any(|w| w.contains("push_to_hub")),
        "{warnings:?}"
    );
    let sink = parsed.config.data.unwrap().sink.unwrap();
    assert_eq!(sink.kind, SourceKind::Hf);
    assert!(sink.push_to_hub);
}

#[test]
fn config_paths_resolve_into_audio_fixture() {
    let parsed = parse_pipeline_config(&fixture("animal_audio")).unwrap();
    let config = parsed.config;

    let repo = resolve_config_path(&config, "$data_config.source.repo_id").unwrap();
    assert_eq!(repo, serde_json::json!("datasets-examples/doc-audio-1"));

    match resolve_config_path(&config, "$graph_config") {
        Err(GraspError::NonScalarPath(_)) => {}
        other => panic!("expected NonScalarPath, got {other:?}"),
    }

    match resolve_config_path(&config, "$data_config.source.missing") {
        Err(GraspError::PathNotFound(seg)) => assert_eq!(seg, "missing"),
        other => panic!("expected PathNotFound, got {other:?}"),
    }
}

#[test]
fn round_trip_is_structurally_stable() {
    for task in ALL_TASKS {
        let first = parse_pipeline_config(&fixture(task))
            .unwrap_or_else(|d| panic!("{task}: {d:?}"))
            .config;
        let yaml = first.to_yaml();
        let second = parse_pipeline_config(&yaml)
            .unwrap_or_else(|d| panic!("{task} reparse: {d:?}\n{yaml}"))
            .config;
        assert_eq!(first, second, "{task} round-trip changed the config");
        assert_eq!(first.config_hash(), second.config_hash());
    }
}

#[test]
fn config_hash_ignores_key_order() {
    let parsed = parse_pipeline_config(&fixture("space_fact")).unwrap().config;
    // Same document with the two top-level blocks swapped.
    let text = fixture("space_fact");
    let (head, tail) = text.split_once("graph_config:").unwrap();
    let reordered = format!("graph_config:{tail}\n{head}");
    let reparsed = parse_pipeline_config(&reordered).unwrap().config;
    assert_eq!(parsed.config_hash(), reparsed.config_hash());
}

#[test]
fn empty_input_reports_missing_graph() {
    let diags = parse_pipeline_config("").unwrap_err();
    assert!(
        diags.iter().any(|d| d.message.contains("missing graph_config")),
        "{diags:?}"
    );
}

#[test]
fn edge_with_both_to_and_condition_is_rejected() {
    // B.2 mutated: the conditional edge also sets `to:`.
    let mutated = fixture("code_validate").replace(
        "    - from: validate\n      condition:",
        "    - from: validate\n      to: END\n      condition:",
    );
    let diags = parse_pipeline_config(&mutated).unwrap_err();
    assert!(
        diags.iter().any(|d| d.message.contains("both to and condition")),
        "{diags:?}"
    );
}

#[test]
fn unknown_node_type_is_an_error() {
    let mutated = fixture("space_fact").replace("node_type: llm", "node_type: quantum");
    let diags = parse_pipeline_config(&mutated).unwrap_err();
    assert!(
        diags.iter().any(|d| d.message.contains("unknown node_type")),
        "{diags:?}"
    );
}

#[test]
fn unknown_top_level_key_warns_only() {
    let text = format!("{}\nfuture_block:\n  key: 1\n", fixture("space_fact"));
    let parsed = parse_pipeline_config(&text).unwrap();
    assert!(parsed
        .diagnostics
        .iter()
        .any(|d| d.severity == Severity::Warning && d.path == "future_block"));
}

#[test]
fn bad_rule_type_is_an_error() {
    let mutated = fixture("code_validate").replace(
        "    - name: solution\n      type: str",
        "    - name: solution\n      type: str\n      is_greater_than: 3",
    );
    let diags = parse_pipeline_config(&mutated).unwrap_err();
    assert!(
        diags.iter().any(|d| d.message.contains("numeric rule on str")),
        "{diags:?}"
    );
}

#[test]
fn independent_violations_all_reported() {
    // Three separate problems injected into B.2: each yields a diagnostic.
    let mutated = fixture("code_validate")
        .replace("node_type: lambda", "node_type: lambda_x")
        .replace(
            "    - from: START\n      to: generate",
            "    - from: START\n      to: generate\n      condition: r\n      path_map:\n        a: generate",
        )
        .replace(
            "    - name: solution\n      type: str",
            "    - name: solution\n      type: str\n      is_greater_than: 3",
        );
    let diags = parse_pipeline_config(&mutated).unwrap_err();
    let errors = diags.iter().filter(|d| d.severity == Severity::Error).count();
    assert!(errors >= 3, "expected >= 3 errors, got {diags:?}");
}

#[test]
fn syntax_error_carries_location() {
    let diags = parse_pipeline_config("graph_config:\n  nodes: [\n").unwrap_err();
    assert_eq!(diags.len(), 1);
    assert!(diags[0].path.contains("line"), "{:?}", diags[0]);
}

#[test]
fn weighted_sampler_weight_validation() {
    let text = r#"
data_config:
  sink: {type: jsonl, file_path: out.jsonl}
graph_config:
  nodes:
    pick:
      node_type: weighted_sampler
      output_keys: v
      sampler:
        - value: a
          weight: -1.0
  edges:
    - {from: START, to: pick}
    - {from: pick, to: END}
output_config:
  output_map:
    v: {from: v}
"#;
    let diags = parse_pipeline_config(text).unwrap_err();
    assert!(diags.iter().any(|d| d.message.contains(">= 0")), "{diags:?}");
}
