//! Graph compilation: subgraph expansion, callable binding, structural
//! validation, and loop bounding.
//!
//! Compilation is deterministic and fails fast: every dotted name is resolved
//! against the registry here, every edge endpoint checked, and cycles are
//! only admitted when a conditional edge can break them (with the loop budget
//! as the runtime backstop).

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use indexmap::IndexMap;
use serde_json::Value;

use crate::backend::{schema_from_fields, ToolSpec};
use crate::config::{
    EdgeSpec, GraphConfig, GraphSettings, NodeSpec, NodeType, PartTemplate, SchemaRef, END_NODE,
    START_NODE,
};
use crate::diag::{has_errors, Diagnostic};
use crate::registry::{HookFn, LambdaFn, Registry, RouterFn, ToolFn};
use crate::template;

/// Reusable graphs addressed by name (one YAML graph file per entry).
pub type SubgraphLibrary = HashMap<String, GraphConfig>;

/// Load every `*.yaml`/`*.yml` in `<base>/graphs` as a subgraph keyed by
/// file stem. A missing directory is an empty library.
pub fn load_subgraph_library(base: &std::path::Path) -> Result<SubgraphLibrary, Vec<Diagnostic>> {
    let mut library = SubgraphLibrary::new();
    let dir = base.join("graphs");
    let Ok(entries) = std::fs::read_dir(&dir) else {
        return Ok(library);
    };
    let mut paths: Vec<std::path::PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "yaml" || e == "yml").unwrap_or(false))
        .collect();
    paths.sort();
    for path in paths {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let text = std::fs::read_to_string(&path).map_err(|e| {
            vec![Diagnostic::error(
                path.display().to_string(),
                format!("cannot read subgraph file: {e}"),
            )]
        })?;
        let graph = crate::config::parse_subgraph_file(&text).map_err(|mut diags| {
            for d in &mut diags {
                d.path = format!("{}:{}", name, d.path);
            }
            diags
        })?;
        library.insert(name, graph);
    }
    Ok(library)
}

/// What is known about source columns at compile time.
#[derive(Debug, Clone)]
pub enum ColumnInfo {
    /// No source configured: placeholders must come from the graph itself.
    DataLess,
    /// A source is configured but its columns cannot be enumerated now;
    /// unresolved placeholders are assumed to be source columns.
    Unknown,
    Known(BTreeSet<String>),
}

#[derive(Clone)]
pub struct BoundTool {
    pub spec: ToolSpec,
    pub call: ToolFn,
}

/// Node with all dotted names resolved.
#[derive(Clone)]
pub struct BoundNode {
    pub name: String,
    pub spec: NodeSpec,
    pub lambda: Option<LambdaFn>,
    pub tools: Vec<BoundTool>,
    pub pre_hook: Option<HookFn>,
    pub post_hook: Option<HookFn>,
    /// Resolved JSON schema when structured output is enabled.
    pub structured_schema: Option<Value>,
}

#[derive(Clone)]
pub struct RouterEdge {
    pub condition: String,
    pub router: RouterFn,
    pub path_map: IndexMap<String, String>,
}

/// Out-edge of a node: a fixed successor or a runtime-routed choice.
#[derive(Clone)]
pub enum Next {
    Simple(String),
    Router(RouterEdge),
}

pub struct CompiledGraph {
    pub settings: GraphSettings,
    pub nodes: IndexMap<String, BoundNode>,
    /// Keyed by node name or `START`; targets may be `END`.
    pub successors: HashMap<String, Next>,
    /// Max node executions per record.
    pub loop_budget: usize,
}

impl CompiledGraph {
    pub fn entry(&self) -> Option<&Next> {
        self.successors.get(START_NODE)
    }

    pub fn next_after(&self, node: &str) -> Option<&Next> {
        self.successors.get(node)
    }
}

pub struct Compiled {
    pub graph: CompiledGraph,
    /// Warnings and notes produced during compilation.
    pub diagnostics: Vec<Diagnostic>,
}

impl std::fmt::Debug for Compiled {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Compiled")
            .field("nodes", &self.graph.nodes.keys())
            .field("loop_budget", &self.graph.loop_budget)
            .field("diagnostics", &self.diagnostics)
            .finish()
    }
}

const MAX_SUBGRAPH_DEPTH: usize = 8;

/// Compile a graph config against a registry.
///
/// Subgraphs are inlined (prefix-namespaced, depth-limited), dotted names
/// bound, structure validated, and the loop budget fixed (default 4× node
/// count).
pub fn compile(
    graph: &GraphConfig,
    registry: &Registry,
    library: &SubgraphLibrary,
    columns: &ColumnInfo,
) -> Result<Compiled, Vec<Diagnostic>> {
    let mut diags = Vec::new();

    let expanded = expand_all(graph, library, &mut diags);
    if has_errors(&diags) {
        return Err(diags);
    }

    check_structure(&expanded, &mut diags);
    check_output_keys(&expanded, &mut diags);
    check_placeholders(&expanded, columns, &mut diags);

    let mut nodes = IndexMap::new();
    for (name, spec) in &expanded.nodes {
        nodes.insert(name.clone(), bind_node(name, spec, registry, &mut diags));
    }

    let mut successors = HashMap::new();
    for (i, edge) in expanded.edges.iter().enumerate() {
        let path = format!("graph_config.edges[{i}]");
        let next = if let Some(to) = &edge.to {
            Next::Simple(to.clone())
        } else if let Some(condition) = &edge.condition {
            match registry.router(condition) {
                Some(router) => Next::Router(RouterEdge {
                    condition: condition.clone(),
                    router,
                    path_map: edge.path_map.clone(),
                }),
                None => {
                    diags.push(Diagnostic::error(
                        format!("{path}.condition"),
                        format!("unresolved router {condition:?}"),
                    ));
                    continue;
                }
            }
        } else {
            continue;
        };
        if successors.insert(edge.from.clone(), next).is_some() {
            diags.push(Diagnostic::error(
                path,
                format!("node {:?} has more than one outgoing edge", edge.from),
            ));
        }
    }

    let loop_budget = expanded
        .settings
        .loop_budget
        .unwrap_or_else(|| 4 * expanded.nodes.len().max(1));

    let compiled = CompiledGraph {
        settings: expanded.settings.clone(),
        nodes,
        successors,
        loop_budget,
    };

    diags.extend(validate_cycles(&compiled));

    if has_errors(&diags) {
        Err(diags)
    } else {
        Ok(Compiled {
            graph: compiled,
            diagnostics: diags,
        })
    }
}

fn bind_node(name: &str, spec: &NodeSpec, registry: &Registry, diags: &mut Vec<Diagnostic>) -> BoundNode {
    let path = format!("graph_config.nodes.{name}");
    let mut bound = BoundNode {
        name: name.to_string(),
        spec: spec.clone(),
        lambda: None,
        tools: Vec::new(),
        pre_hook: None,
        post_hook: None,
        structured_schema: None,
    };
    if let Some(lambda_name) = &spec.lambda {
        match registry.lambda(lambda_name) {
            Some(f) => bound.lambda = Some(f),
            None => diags.push(Diagnostic::error(
                format!("{path}.lambda"),
                format!("unresolved lambda {lambda_name:?}"),
            )),
        }
    }
    let mut seen_tool_names = HashSet::new();
    for tool_name in &spec.tools {
        match registry.tool(tool_name) {
            Some(t) => {
                if !seen_tool_names.insert(t.spec.name.clone()) {
                    diags.push(Diagnostic::error(
                        format!("{path}.tools"),
                        format!("duplicate tool name {:?} in node tool list", t.spec.name),
                    ));
                }
                bound.tools.push(BoundTool {
                    spec: t.spec,
                    call: t.call,
                });
            }
            None => diags.push(Diagnostic::error(
                format!("{path}.tools"),
                format!("unresolved tool {tool_name:?}"),
            )),
        }
    }
    if let Some(h) = &spec.pre_process {
        match registry.hook(h) {
            Some(f) => bound.pre_hook = Some(f),
            None => diags.push(Diagnostic::error(
                format!("{path}.pre_process"),
                format!("unresolved hook {h:?}"),
            )),
        }
    }
    if let Some(h) = &spec.post_process {
        match registry.hook(h) {
            Some(f) => bound.post_hook = Some(f),
            None => diags.push(Diagnostic::error(
                format!("{path}.post_process"),
                format!("unresolved hook {h:?}"),
            )),
        }
    }
    if let Some(so) = &spec.structured_output {
        if so.enabled {
            match &so.schema {
                SchemaRef::Named(schema_name) => match registry.schema(schema_name) {
                    Some(s) => bound.structured_schema = Some(s),
                    None => diags.push(Diagnostic::error(
                        format!("{path}.structured_output.schema"),
                        format!("unresolved schema {schema_name:?}"),
                    )),
                },
                SchemaRef::Inline(fields) => {
                    for f in fields {
                        diags.extend(crate::config::check_field_rules_pub(
                            f,
                            &format!("{path}.structured_output.schema.fields.{}", f.name),
                        ));
                    }
                    bound.structured_schema = Some(schema_from_fields(fields));
                }
            }
        }
    }
    bound
}

/// Inline every subgraph node, recursively, up to the depth limit.
fn expand_all(graph: &GraphConfig, library: &SubgraphLibrary, diags: &mut Vec<Diagnostic>) -> GraphConfig {
    let mut current = graph.clone();
    for depth in 0.. {
        let target = current
            .nodes
            .iter()
            .find(|(_, spec)| spec.node_type == NodeType::Subgraph)
            .map(|(name, _)| name.clone());
        let Some(node_name) = target else {
            break;
        };
        if depth >= MAX_SUBGRAPH_DEPTH {
            diags.push(Diagnostic::error(
                format!("graph_config.nodes.{node_name}"),
                format!("subgraph recursion exceeds depth {MAX_SUBGRAPH_DEPTH}"),
            ));
            break;
        }
        match expand_subgraph(&current, &node_name, library) {
            Ok(next) => current = next,
            Err(mut e) => {
                diags.append(&mut e);
                break;
            }
        }
    }
    current
}

/// Splice one subgraph node's referenced graph into the parent.
///
/// Child nodes are inlined under the `<node>/` prefix; the child's START
/// successor takes the parent's in-edges and its END predecessors take the
/// parent's out-edge.
pub fn expand_subgraph(
    parent: &GraphConfig,
    node_name: &str,
    library: &SubgraphLibrary,
) -> Result<GraphConfig, Vec<Diagnostic>> {
    let path = format!("graph_config.nodes.{node_name}");
    let spec = parent
        .nodes
        .get(node_name)
        .ok_or_else(|| vec![Diagnostic::error(&path, "unknown subgraph node")])?;
    let graph_ref = spec
        .subgraph
        .as_ref()
        .ok_or_else(|| vec![Diagnostic::error(&path, "subgraph node has no reference")])?;
    let child = library
        .get(graph_ref)
        .ok_or_else(|| vec![Diagnostic::error(&path, format!("unknown subgraph {graph_ref:?}"))])?;

    let prefix = format!("{node_name}/");
    let rename = |n: &str| -> String {
        if n == START_NODE || n == END_NODE {
            n.to_string()
        } else {
            format!("{prefix}{n}")
        }
    };

    // Child entry: exactly one simple edge from START.
    let child_entries: Vec<&EdgeSpec> = child.edges.iter().filter(|e| e.from == START_NODE).collect();
    if child_entries.len() != 1 || child_entries[0].to.is_none() {
        return Err(vec![Diagnostic::error(
            &path,
            format!("subgraph {graph_ref:?} must have exactly one simple edge from START"),
        )]);
    }
    let child_entry = rename(child_entries[0].to.as_ref().unwrap());

    // Parent out-edge of the subgraph node (if any).
    let parent_exits: Vec<&EdgeSpec> = parent.edges.iter().filter(|e| e.from == node_name).collect();
    if parent_exits.len() > 1 {
        return Err(vec![Diagnostic::error(
            &path,
            "subgraph node has more than one outgoing edge",
        )]);
    }
    let parent_exit = parent_exits.first().copied();

    let mut out = GraphConfig {
        settings: parent.settings.clone(),
        nodes: IndexMap::new(),
        edges: Vec::new(),
    };

    // Parent nodes minus the subgraph node, plus prefixed child nodes.
    for (name, node) in &parent.nodes {
        if name != node_name {
            out.nodes.insert(name.clone(), node.clone());
        }
    }
    for (name, node) in &child.nodes {
        out.nodes.insert(rename(name), node.clone());
    }

    // Parent edges: in-edges retarget to the child entry; the out-edge is
    // re-attached to the child's exits below.
    for edge in &parent.edges {
        if edge.from == node_name {
            continue;
        }
        let mut e = edge.clone();
        if e.to.as_deref() == Some(node_name) {
            e.to = Some(child_entry.clone());
        }
        for target in e.path_map.values_mut() {
            if target == node_name {
                *target = child_entry.clone();
            }
        }
        out.edges.push(e);
    }

    // Child edges, prefixed; exits to END splice onto the parent's out-edge.
    for edge in &child.edges {
        if edge.from == START_NODE {
            continue;
        }
        let mut e = edge.clone();
        e.from = rename(&e.from);
        if let Some(to) = &e.to {
            if to == END_NODE {
                match parent_exit {
                    Some(exit) => {
                        if let Some(exit_to) = &exit.to {
                            e.to = Some(exit_to.clone());
                        } else {
                            // Parent leaves the subgraph through a router.
                            e = EdgeSpec {
                                from: e.from,
                                to: None,
                                condition: exit.condition.clone(),
                                path_map: exit.path_map.clone(),
                            };
                        }
                    }
                    None => e.to = Some(END_NODE.to_string()),
                }
            } else {
                e.to = Some(rename(to));
            }
        }
        for target in e.path_map.values_mut() {
            if target == END_NODE {
                if let Some(exit) = parent_exit {
                    match &exit.to {
                        Some(exit_to) => *target = exit_to.clone(),
                        None => {
                            return Err(vec![Diagnostic::error(
                                &path,
                                "subgraph router exit cannot splice onto a conditional parent edge",
                            )])
                        }
                    }
                }
            } else if target != START_NODE {
                *target = rename(target);
            }
        }
        out.edges.push(e);
    }

    Ok(out)
}

/// All successor targets of a node, router labels included.
fn targets_of(next: &Next) -> Vec<&str> {
    match next {
        Next::Simple(t) => vec![t.as_str()],
        Next::Router(r) => r.path_map.values().map(String::as_str).collect(),
    }
}

fn edge_targets(edge: &EdgeSpec) -> Vec<&str> {
    match &edge.to {
        Some(t) => vec![t.as_str()],
        None => edge.path_map.values().map(String::as_str).collect(),
    }
}

fn check_structure(graph: &GraphConfig, diags: &mut Vec<Diagnostic>) {
    let known = |n: &str| n == START_NODE || n == END_NODE || graph.nodes.contains_key(n);

    if graph.nodes.is_empty() {
        diags.push(Diagnostic::error("graph_config.nodes", "graph has no nodes"));
    }

    for (i, edge) in graph.edges.iter().enumerate() {
        let path = format!("graph_config.edges[{i}]");
        if !known(&edge.from) {
            diags.push(Diagnostic::error(&path, format!("unknown node {:?}", edge.from)));
        }
        if edge.from == END_NODE {
            diags.push(Diagnostic::error(&path, "edges cannot leave END"));
        }
        for t in edge_targets(edge) {
            if !known(t) {
                diags.push(Diagnostic::error(&path, format!("unknown node {t:?}")));
            }
            if t == START_NODE {
                diags.push(Diagnostic::error(&path, "edges cannot enter START"));
            }
        }
    }
    if !graph.edges.iter().any(|e| e.from == START_NODE) {
        diags.push(Diagnostic::error("graph_config.edges", "no edge from START"));
    }

    // Forward reachability from START.
    let mut adjacency: HashMap<&str, Vec<&str>> = HashMap::new();
    for edge in &graph.edges {
        adjacency
            .entry(edge.from.as_str())
            .or_default()
            .extend(edge_targets(edge));
    }
    let reachable = bfs(START_NODE, &adjacency);
    for name in graph.nodes.keys() {
        if !reachable.contains(name.as_str()) {
            diags.push(Diagnostic::error(
                format!("graph_config.nodes.{name}"),
                "node unreachable from START",
            ));
        }
    }

    // END reachable from every (reachable) node.
    let mut reverse: HashMap<&str, Vec<&str>> = HashMap::new();
    for edge in &graph.edges {
        for t in edge_targets(edge) {
            reverse.entry(t).or_default().push(edge.from.as_str());
        }
    }
    let reaches_end = bfs(END_NODE, &reverse);
    for name in graph.nodes.keys() {
        if reachable.contains(name.as_str()) && !reaches_end.contains(name.as_str()) {
            diags.push(Diagnostic::error(
                format!("graph_config.nodes.{name}"),
                "END not reachable from node",
            ));
        }
    }
}

fn bfs<'a>(start: &'a str, adjacency: &HashMap<&'a str, Vec<&'a str>>) -> HashSet<&'a str> {
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    queue.push_back(start);
    seen.insert(start);
    while let Some(cur) = queue.pop_front() {
        if let Some(nexts) = adjacency.get(cur) {
            for n in nexts {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
    }
    seen
}

fn check_output_keys(graph: &GraphConfig, diags: &mut Vec<Diagnostic>) {
    let mut owners: HashMap<&str, &str> = HashMap::new();
    for (name, spec) in &graph.nodes {
        for key in &spec.output_keys {
            if let Some(prev) = owners.insert(key.as_str(), name.as_str()) {
                diags.push(Diagnostic::error(
                    format!("graph_config.nodes.{name}.output_keys"),
                    format!("output key {key:?} already produced by node {prev:?}"),
                ));
            }
        }
    }
}

fn node_placeholders(spec: &NodeSpec) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for msg in &spec.prompt {
        for part in &msg.parts {
            let text = match part {
                PartTemplate::Text(t) => t,
                PartTemplate::ImageUrl(u) => u,
                PartTemplate::AudioUrl(u) => u,
            };
            out.extend(template::placeholders(text));
        }
    }
    out
}

/// A placeholder is resolvable if it names a source column, a graph-level
/// setting, or an output key of a node that may precede the consumer on at
/// least one START-path.
fn check_placeholders(graph: &GraphConfig, columns: &ColumnInfo, diags: &mut Vec<Diagnostic>) {
    let mut adjacency: HashMap<&str, Vec<&str>> = HashMap::new();
    for edge in &graph.edges {
        adjacency
            .entry(edge.from.as_str())
            .or_default()
            .extend(edge_targets(edge));
    }
    let from_start = bfs(START_NODE, &adjacency);
    // Graph-level settings plus the keys the engine injects on every record.
    let settings_keys: BTreeSet<&str> = [
        "chat_conversation",
        "chat_history_window_size",
        "__index",
        "messages",
    ]
    .into_iter()
    .collect();

    for (name, spec) in &graph.nodes {
        let wanted = node_placeholders(spec);
        if wanted.is_empty() {
            continue;
        }
        // Keys produced by any node that may precede this one.
        let mut available: BTreeSet<&str> = BTreeSet::new();
        for (other, other_spec) in &graph.nodes {
            if other == name || !from_start.contains(other.as_str()) {
                continue;
            }
            if bfs(other.as_str(), &adjacency).contains(name.as_str()) {
                available.extend(other_spec.output_keys.iter().map(String::as_str));
            }
        }
        // A node on a cycle can consume its own keys on re-entry.
        let self_cycle = adjacency
            .get(name.as_str())
            .map(|next| next.iter().any(|n| bfs(n, &adjacency).contains(name.as_str())))
            .unwrap_or(false);
        if self_cycle {
            available.extend(spec.output_keys.iter().map(String::as_str));
        }

        for key in &wanted {
            if available.contains(key.as_str()) || settings_keys.contains(key.as_str()) {
                continue;
            }
            let npath = format!("graph_config.nodes.{name}.prompt");
            match columns {
                ColumnInfo::Known(cols) if cols.contains(key) => {}
                ColumnInfo::Known(_) | ColumnInfo::DataLess => {
                    diags.push(Diagnostic::error(
                        npath,
                        format!(
                            "placeholder {{{key}}} cannot be produced by any upstream node or source column"
                        ),
                    ));
                }
                ColumnInfo::Unknown => {
                    diags.push(Diagnostic::note(
                        npath,
                        format!("placeholder {{{key}}} assumed to be a source column"),
                    ));
                }
            }
        }
    }
}

/// Cycle admission: a cycle whose edges are all simple can never exit, so it
/// is an error; cycles passing through a conditional edge are allowed and
/// noted with the budget that bounds them.
pub fn validate_cycles(graph: &CompiledGraph) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let names: Vec<&str> = graph.nodes.keys().map(String::as_str).collect();
    let index_of: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();

    // Adjacency among real nodes only.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
    for (from, next) in &graph.successors {
        let Some(&fi) = index_of.get(from.as_str()) else { continue };
        for t in targets_of(next) {
            if let Some(&ti) = index_of.get(t) {
                adj[fi].push(ti);
            }
        }
    }

    for scc in tarjan_sccs(&adj) {
        let in_scc: HashSet<usize> = scc.iter().copied().collect();
        let is_cycle = scc.len() > 1 || adj[scc[0]].contains(&scc[0]);
        if !is_cycle {
            continue;
        }
        // A router inside the cycle with at least one way out breaks it.
        let mut conditional = false;
        for &ni in &scc {
            if let Some(Next::Router(r)) = graph.successors.get(names[ni]) {
                let inside = |t: &String| {
                    index_of
                        .get(t.as_str())
                        .map(|ti| in_scc.contains(ti))
                        .unwrap_or(false)
                };
                let routes_inside = r.path_map.values().any(&inside);
                let routes_outside = r.path_map.values().any(|t| !inside(t));
                if routes_inside && routes_outside {
                    conditional = true;
                }
            }
        }
        let members: Vec<&str> = scc.iter().map(|i| names[*i]).collect();
        if conditional {
            diags.push(Diagnostic::note(
                format!("graph_config.nodes.{}", members[0]),
                format!(
                    "cycle through {} is bounded by loop_budget {}",
                    members.join(" -> "),
                    graph.loop_budget
                ),
            ));
        } else {
            diags.push(Diagnostic::error(
                format!("graph_config.nodes.{}", members[0]),
                format!("unconditional cycle through {}", members.join(" -> ")),
            ));
        }
    }
    diags
}

/// Iterative Tarjan strongly-connected components.
fn tarjan_sccs(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0usize;
    let mut sccs = Vec::new();

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        // Explicit DFS stack of (node, next child offset).
        let mut call_stack: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(&mut (v, ref mut ci)) = call_stack.last_mut() {
            if *ci == 0 {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if *ci < adj[v].len() {
                let w = adj[v][*ci];
                *ci += 1;
                if index[w] == usize::MAX {
                    call_stack.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call_stack.pop();
                if let Some(&mut (parent, _)) = call_stack.last_mut() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut scc = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        scc.push(w);
                        if w == v {
                            break;
                        }
                    }
                    scc.sort_unstable();
                    sccs.push(scc);
                }
            }
        }
    }
    sccs
}
