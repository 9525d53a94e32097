//! Compilation checks: fixtures compile, structural mutations are caught,
//! subgraphs expand, and routed walks stay within the loop budget.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use grasp_core::config::{parse_pipeline_config, parse_subgraph_file, GraphConfig};
use grasp_core::diag::Severity;
use grasp_core::graph::{compile, expand_subgraph, ColumnInfo, Next, SubgraphLibrary};
use grasp_core::registry::Registry;

fn tasks_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../tasks")
}

fn graph_of(task: &str) -> GraphConfig {
    let text = std::fs::read_to_string(tasks_dir().join(task).join("config.yaml")).unwrap();
    parse_pipeline_config(&text).unwrap().config.graph
}

fn graph_from_yaml(text: &str) -> GraphConfig {
    parse_subgraph_file(text).unwrap()
}

#[test]
fn single_node_graph_compiles() {
    let graph = graph_of("space_fact");
    let compiled = compile(&graph, &Registry::builtin(), &SubgraphLibrary::new(), &ColumnInfo::DataLess)
        .unwrap()
        .graph;
    assert_eq!(compiled.nodes.len(), 1);
    match compiled.entry().unwrap() {
        Next::Simple(to) => assert_eq!(to, "generate"),
        Next::Router(_) => panic!("entry should be simple"),
    }
    // Default budget: 4 x node count.
    assert_eq!(compiled.loop_budget, 4);
}

#[test]
fn router_cycle_is_accepted_with_note() {
    let graph = graph_of("code_validate");
    let compiled = compile(
        &graph,
        &Registry::builtin(),
        &SubgraphLibrary::new(),
        &ColumnInfo::Known(["task_id".to_string(), "task".to_string()].into_iter().collect()),
    )
    .unwrap();
    let note = compiled
        .diagnostics
        .iter()
        .find(|d| d.severity == Severity::Note)
        .expect("cycle note");
    assert!(note.message.contains("loop_budget"), "{note}");
}

#[test]
fn dangling_edge_is_reported() {
    let graph = graph_from_yaml(
        r#"
nodes:
  a:
    node_type: lambda
    lambda: hooks.missing
    output_keys: [x]
edges:
  - {from: START, to: a}
  - {from: a, to: foo}
"#,
    );
    let diags = compile(&graph, &Registry::builtin(), &SubgraphLibrary::new(), &ColumnInfo::DataLess)
        .unwrap_err();
    assert!(
        diags.iter().any(|d| d.message.contains("unknown node \"foo\"")),
        "{diags:?}"
    );
}

#[test]
fn unconditional_cycle_is_an_error() {
    let graph = graph_from_yaml(
        r#"
nodes:
  a:
    node_type: lambda
    lambda: evolve.pick_evolved
    output_keys: [evolved]
  b:
    node_type: lambda
    lambda: validators.code.check_validity
    output_keys: [is_valid]
edges:
  - {from: START, to: a}
  - {from: a, to: b}
  - {from: b, to: a}
"#,
    );
    let diags = compile(&graph, &Registry::builtin(), &SubgraphLibrary::new(), &ColumnInfo::DataLess)
        .unwrap_err();
    assert!(
        diags.iter().any(|d| d.message.contains("unconditional cycle")),
        "{diags:?}"
    );
}

#[test]
fn acyclic_chain_has_no_cycle_diagnostics() {
    let graph = graph_from_yaml(
        r#"
nodes:
  a:
    node_type: lambda
    lambda: evolve.pick_evolved
    output_keys: [evolved]
  b:
    node_type: lambda
    lambda: validators.code.check_validity
    output_keys: [is_valid]
edges:
  - {from: START, to: a}
  - {from: a, to: b}
  - {from: b, to: END}
"#,
    );
    let compiled = compile(&graph, &Registry::builtin(), &SubgraphLibrary::new(), &ColumnInfo::DataLess)
        .unwrap();
    assert!(
        compiled.diagnostics.iter().all(|d| !d.message.contains("cycle")),
        "{:?}",
        compiled.diagnostics
    );
}

#[test]
fn unresolved_names_fail_compilation() {
    let graph = graph_from_yaml(
        r#"
nodes:
  a:
    node_type: lambda
    lambda: no.such.callable
    output_keys: [x]
edges:
  - {from: START, to: a}
  - {from: a, to: END}
"#,
    );
    let diags = compile(&graph, &Registry::builtin(), &SubgraphLibrary::new(), &ColumnInfo::DataLess)
        .unwrap_err();
    assert!(
        diags.iter().any(|d| d.message.contains("unresolved lambda")),
        "{diags:?}"
    );
}

#[test]
fn duplicate_output_keys_are_flagged() {
    let graph = graph_from_yaml(
        r#"
nodes:
  a:
    node_type: lambda
    lambda: evolve.pick_evolved
    output_keys: [evolved]
  b:
    node_type: lambda
    lambda: evolve.pick_evolved
    output_keys: [evolved]
edges:
  - {from: START, to: a}
  - {from: a, to: b}
  - {from: b, to: END}
"#,
    );
    let diags = compile(&graph, &Registry::builtin(), &SubgraphLibrary::new(), &ColumnInfo::DataLess)
        .unwrap_err();
    assert!(
        diags.iter().any(|d| d.message.contains("already produced")),
        "{diags:?}"
    );
}

#[test]
fn unreachable_node_is_flagged() {
    let graph = graph_from_yaml(
        r#"
nodes:
  a:
    node_type: lambda
    lambda: evolve.pick_evolved
    output_keys: [evolved]
  orphan:
    node_type: lambda
    lambda: validators.code.check_validity
    output_keys: [is_valid]
edges:
  - {from: START, to: a}
  - {from: a, to: END}
  - {from: orphan, to: END}
"#,
    );
    let diags = compile(&graph, &Registry::builtin(), &SubgraphLibrary::new(), &ColumnInfo::DataLess)
        .unwrap_err();
    assert!(
        diags.iter().any(|d| d.message.contains("unreachable")),
        "{diags:?}"
    );
}

fn evolve_library() -> SubgraphLibrary {
    let text = std::fs::read_to_string(tasks_dir().join("evolve/graphs/evolve_instruct.yaml")).unwrap();
    let mut lib = SubgraphLibrary::new();
    lib.insert("evolve_instruct".to_string(), parse_subgraph_file(&text).unwrap());
    lib
}

#[test]
fn subgraph_expansion_prefixes_child_nodes() {
    let graph = graph_of("evolve");
    let compiled = compile(&graph, &Registry::builtin(), &evolve_library(), &ColumnInfo::DataLess)
        .unwrap()
        .graph;
    let names: HashSet<&str> = compiled.nodes.keys().map(String::as_str).collect();
    for expected in ["seed", "evolve/strategy", "evolve/deepen", "evolve/broaden", "evolve/pick"] {
        assert!(names.contains(expected), "missing {expected}: {names:?}");
    }
    // The router moved with its node.
    assert!(matches!(
        compiled.next_after("evolve/strategy"),
        Some(Next::Router(_))
    ));
    // No subgraph node survives expansion.
    assert!(compiled
        .nodes
        .values()
        .all(|n| n.spec.node_type != grasp_core::config::NodeType::Subgraph));
}

#[test]
fn self_referencing_subgraph_hits_recursion_limit() {
    let child = graph_from_yaml(
        r#"
nodes:
  inner:
    node_type: subgraph
    subgraph: loop_graph
edges:
  - {from: START, to: inner}
  - {from: inner, to: END}
"#,
    );
    let mut lib = SubgraphLibrary::new();
    lib.insert("loop_graph".to_string(), child.clone());
    let diags = compile(&child, &Registry::builtin(), &lib, &ColumnInfo::DataLess).unwrap_err();
    assert!(
        diags.iter().any(|d| d.message.contains("recursion")),
        "{diags:?}"
    );
}

#[test]
fn twice_instantiated_subgraph_gets_disjoint_names() {
    // Two-node recipe, expanded by hand: each instance is namespaced by its
    // own node name, so the node sets are disjoint.
    let recipe = graph_from_yaml(
        r#"
nodes:
  first:
    node_type: lambda
    lambda: evolve.pick_evolved
    output_keys: [evolved]
  second:
    node_type: lambda
    lambda: validators.code.check_validity
    output_keys: [is_valid]
edges:
  - {from: START, to: first}
  - {from: first, to: second}
  - {from: second, to: END}
"#,
    );
    let parent = graph_from_yaml(
        r#"
nodes:
  use_a:
    node_type: subgraph
    subgraph: recipe
  use_b:
    node_type: subgraph
    subgraph: recipe
edges:
  - {from: START, to: use_a}
  - {from: use_a, to: use_b}
  - {from: use_b, to: END}
"#,
    );
    let mut lib = SubgraphLibrary::new();
    lib.insert("recipe".to_string(), recipe);

    let once = expand_subgraph(&parent, "use_a", &lib).unwrap();
    let twice = expand_subgraph(&once, "use_b", &lib).unwrap();
    let names: HashSet<&str> = twice.nodes.keys().map(String::as_str).collect();
    assert_eq!(
        names,
        ["use_a/first", "use_a/second", "use_b/first", "use_b/second"]
            .into_iter()
            .collect::<HashSet<&str>>()
    );
    // Edges splice through: use_a/second -> use_b/first.
    assert!(twice
        .edges
        .iter()
        .any(|e| e.from == "use_a/second" && e.to.as_deref() == Some("use_b/first")));
}

#[test]
fn unresolvable_placeholder_is_an_error_when_columns_known() {
    let graph = graph_from_yaml(
        r#"
nodes:
  gen:
    node_type: llm
    output_keys: [answer]
    prompt:
      - user: "{mystery}"
    model: {name: m}
edges:
  - {from: START, to: gen}
  - {from: gen, to: END}
"#,
    );
    let cols: ColumnInfo = ColumnInfo::Known(["task".to_string()].into_iter().collect());
    let diags = compile(&graph, &Registry::builtin(), &SubgraphLibrary::new(), &cols).unwrap_err();
    assert!(
        diags.iter().any(|d| d.message.contains("{mystery}")),
        "{diags:?}"
    );

    // Same graph with unknown columns only notes the assumption.
    let compiled = compile(&graph, &Registry::builtin(), &SubgraphLibrary::new(), &ColumnInfo::Unknown)
        .unwrap();
    assert!(compiled
        .diagnostics
        .iter()
        .any(|d| d.severity == Severity::Note && d.message.contains("{mystery}")));
}

#[test]
fn placeholder_resolvable_via_any_path() {
    // The producer sits on only one router branch; may-precede still admits it.
    let graph = graph_from_yaml(
        r#"
nodes:
  pick:
    node_type: weighted_sampler
    output_keys: [strategy]
    sampler:
      - {value: a, weight: 1.0}
  maker:
    node_type: lambda
    lambda: evolve.pick_evolved
    output_keys: [evolved]
  user_node:
    node_type: llm
    output_keys: [answer]
    prompt:
      - user: "{evolved}"
    model: {name: m}
edges:
  - {from: START, to: pick}
  - from: pick
    condition: evolve.RouteStrategy
    path_map:
      a: maker
      b: user_node
  - {from: maker, to: user_node}
  - {from: user_node, to: END}
"#,
    );
    let compiled = compile(&graph, &Registry::builtin(), &SubgraphLibrary::new(), &ColumnInfo::DataLess);
    assert!(compiled.is_ok(), "{:?}", compiled.err());
}

#[test]
fn compile_is_deterministic() {
    let graph = graph_of("evolve");
    let registry = Registry::builtin();
    let lib = evolve_library();
    let a = compile(&graph, &registry, &lib, &ColumnInfo::DataLess).unwrap().graph;
    let b = compile(&graph, &registry, &lib, &ColumnInfo::DataLess).unwrap().graph;
    assert_eq!(
        a.nodes.keys().collect::<Vec<_>>(),
        b.nodes.keys().collect::<Vec<_>>()
    );
    assert_eq!(a.loop_budget, b.loop_budget);
    let succ = |g: &grasp_core::graph::CompiledGraph| -> HashMap<String, Vec<String>> {
        g.nodes
            .keys()
            .chain(std::iter::once(&"START".to_string()))
            .map(|n| {
                let targets = match g.next_after(n) {
                    Some(Next::Simple(t)) => vec![t.clone()],
                    Some(Next::Router(r)) => r.path_map.values().cloned().collect(),
                    None => vec![],
                };
                (n.clone(), targets)
            })
            .collect()
    };
    assert_eq!(succ(&a), succ(&b));
}

/// Walks respecting edges, with routers forced through every label
/// assignment, reach END within the budget or get cut off by it.
#[test]
fn routed_walks_bounded_by_budget() {
    let graph = graph_of("code_validate");
    let compiled = compile(
        &graph,
        &Registry::builtin(),
        &SubgraphLibrary::new(),
        &ColumnInfo::Unknown,
    )
    .unwrap()
    .graph;

    // Exhaustive simulation: states are (node, steps); routers branch over
    // every label in their path map.
    let mut frontier = vec![("START".to_string(), 0usize)];
    let mut ended = 0usize;
    let mut cut = 0usize;
    while let Some((node, steps)) = frontier.pop() {
        if node == "END" {
            ended += 1;
            continue;
        }
        if steps >= compiled.loop_budget {
            cut += 1;
            continue;
        }
        let next_steps = if node == "START" { steps } else { steps + 1 };
        match compiled.next_after(&node) {
            Some(Next::Simple(t)) => frontier.push((t.clone(), next_steps)),
            Some(Next::Router(r)) => {
                for target in r.path_map.values() {
                    frontier.push((target.clone(), next_steps));
                }
            }
            None => panic!("{node} has no successor"),
        }
    }
    assert!(ended > 0, "at least one assignment must reach END");
    // The always-looping assignment is cut by the budget, not unbounded.
    assert!(cut > 0, "looping assignment should hit the budget");
}
