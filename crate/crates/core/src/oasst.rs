//! OASST-style conversation trees and SFT/DPO extraction.
//!
//! Linear conversations become parent-linked chains; chains sharing a root
//! merge into trees (common prefixes unified, divergent turns as siblings).
//! Message ids are content-derived digests, so regenerating the same data
//! yields the same ids.

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::dataio::Record;
use crate::error::{GraspError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OasstRole {
    Prompter,
    Assistant,
}

impl OasstRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            OasstRole::Prompter => "prompter",
            OasstRole::Assistant => "assistant",
        }
    }

    fn flip(&self) -> OasstRole {
        match self {
            OasstRole::Prompter => OasstRole::Assistant,
            OasstRole::Assistant => OasstRole::Prompter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OasstMessage {
    pub message_id: String,
    pub parent_id: Option<String>,
    pub role: OasstRole,
    pub text: String,
    pub lang: Option<String>,
    pub metadata: Map<String, Value>,
}

/// Parent-linked conversation tree with a single prompter root and strictly
/// alternating roles along every path.
#[derive(Debug, Clone)]
pub struct OasstTree {
    pub tree_id: String,
    nodes: Vec<OasstMessage>,
    children: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct TreeStats {
    /// Max messages on a root-to-leaf path.
    pub depth: usize,
    pub message_count: usize,
    /// Max children of any message.
    pub branching: usize,
}

/// One input conversation turn.
#[derive(Debug, Clone)]
pub struct ConvTurn {
    pub role: String,
    pub content: String,
    pub metadata: Map<String, Value>,
}

impl ConvTurn {
    pub fn new(role: impl Into<String>, content: impl Into<String>) -> ConvTurn {
        ConvTurn {
            role: role.into(),
            content: content.into(),
            metadata: Map::new(),
        }
    }

    pub fn from_value(v: &Value) -> Option<ConvTurn> {
        let obj = v.as_object()?;
        let role = obj.get("role")?.as_str()?.to_string();
        let content = match obj.get("content") {
            Some(Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
            None => String::new(),
        };
        Some(ConvTurn {
            role,
            content,
            metadata: Map::new(),
        })
    }
}

fn short_digest(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    let out = hasher.finalize();
    out.iter().take(12).map(|b| format!("{b:02x}")).collect()
}

/// Convert a linear conversation into a chain tree.
///
/// Roles must alternate starting from a user/prompter turn; leading system
/// messages fold into the root's metadata rather than becoming tree nodes.
pub fn to_tree(conversation: &[ConvTurn]) -> Result<OasstTree> {
    let mut system_texts = Vec::new();
    let mut turns = Vec::new();
    for (i, t) in conversation.iter().enumerate() {
        match t.role.as_str() {
            "system" => {
                if turns.is_empty() {
                    system_texts.push(t.content.clone());
                } else {
                    return Err(GraspError::Conversion {
                        index: i,
                        message: "system message after the first turn".to_string(),
                    });
                }
            }
            _ => turns.push((i, t)),
        }
    }
    let Some((first_index, first)) = turns.first() else {
        return Err(GraspError::Conversion {
            index: 0,
            message: "conversation is empty".to_string(),
        });
    };
    let first_role = role_of(&first.role).ok_or_else(|| GraspError::Conversion {
        index: *first_index,
        message: format!("unknown role {:?}", first.role),
    })?;
    if first_role != OasstRole::Prompter {
        return Err(GraspError::Conversion {
            index: *first_index,
            message: "conversation must start with a prompter turn".to_string(),
        });
    }

    let tree_id = short_digest(&["tree", &first.content]);
    let mut nodes: Vec<OasstMessage> = Vec::new();
    let mut children: Vec<Vec<usize>> = Vec::new();
    let mut expected = OasstRole::Prompter;
    let mut path: Vec<String> = Vec::new();

    for (i, turn) in &turns {
        let role = role_of(&turn.role).ok_or_else(|| GraspError::Conversion {
            index: *i,
            message: format!("unknown role {:?}", turn.role),
        })?;
        if role != expected {
            return Err(GraspError::Conversion {
                index: *i,
                message: format!(
                    "expected {} turn, got {}",
                    expected.as_str(),
                    role.as_str()
                ),
            });
        }
        path.push(format!("{}:{}", role.as_str(), turn.content));
        let path_refs: Vec<&str> = std::iter::once(tree_id.as_str())
            .chain(path.iter().map(String::as_str))
            .collect();
        let message_id = short_digest(&path_refs);
        let parent_id = nodes.last().map(|m: &OasstMessage| m.message_id.clone());
        let mut metadata = turn.metadata.clone();
        if nodes.is_empty() && !system_texts.is_empty() {
            metadata.insert(
                "system".to_string(),
                Value::String(system_texts.join("\n")),
            );
        }
        let idx = nodes.len();
        nodes.push(OasstMessage {
            message_id,
            parent_id,
            role,
            text: turn.content.clone(),
            lang: None,
            metadata,
        });
        children.push(Vec::new());
        if idx > 0 {
            children[idx - 1].push(idx);
        }
        expected = expected.flip();
    }

    Ok(OasstTree {
        tree_id,
        nodes,
        children,
    })
}

fn role_of(role: &str) -> Option<OasstRole> {
    match role {
        "user" | "prompter" => Some(OasstRole::Prompter),
        "assistant" => Some(OasstRole::Assistant),
        _ => None,
    }
}

impl OasstTree {
    pub fn root(&self) -> &OasstMessage {
        &self.nodes[0]
    }

    pub fn messages(&self) -> &[OasstMessage] {
        &self.nodes
    }

    pub fn children_of(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every root-to-leaf path as (role, text, metadata) chains.
    fn chains(&self) -> Vec<Vec<(OasstRole, String, Map<String, Value>)>> {
        let mut out = Vec::new();
        let mut stack: Vec<(usize, Vec<usize>)> = vec![(0, vec![0])];
        while let Some((idx, path)) = stack.pop() {
            if self.children[idx].is_empty() {
                out.push(
                    path.iter()
                        .map(|&i| {
                            let n = &self.nodes[i];
                            (n.role, n.text.clone(), n.metadata.clone())
                        })
                        .collect(),
                );
            } else {
                for &c in self.children[idx].iter().rev() {
                    let mut p = path.clone();
                    p.push(c);
                    stack.push((c, p));
                }
            }
        }
        out
    }

    /// Depth-first walk, sibling order by message_id.
    fn ordered_children(&self, idx: usize) -> Vec<usize> {
        let mut kids = self.children[idx].clone();
        kids.sort_by(|a, b| self.nodes[*a].message_id.cmp(&self.nodes[*b].message_id));
        kids
    }
}

/// Merge trees whose roots are textually identical: common prefixes (exact
/// role+text match) unify, divergent turns become siblings. Associative up
/// to message-set equality; merging identical chains is a no-op.
pub fn merge_trees(trees: &[OasstTree]) -> Result<OasstTree> {
    let Some(first) = trees.first() else {
        return Err(GraspError::Merge("no trees to merge".to_string()));
    };
    let root_text = &first.root().text;
    for t in trees {
        if &t.root().text != root_text {
            return Err(GraspError::Merge(format!(
                "differing roots: {:?} vs {:?}",
                root_text,
                t.root().text
            )));
        }
    }

    // Trie over (role, text); metadata unions (first writer wins per key).
    struct TrieNode {
        role: OasstRole,
        text: String,
        metadata: Map<String, Value>,
        children: Vec<usize>,
    }
    let mut trie: Vec<TrieNode> = vec![TrieNode {
        role: OasstRole::Prompter,
        text: root_text.clone(),
        metadata: Map::new(),
        children: Vec::new(),
    }];

    for tree in trees {
        for chain in tree.chains() {
            let mut cur = 0usize;
            for (i, (role, text, metadata)) in chain.iter().enumerate() {
                if i == 0 {
                    for (k, v) in metadata {
                        trie[0].metadata.entry(k.clone()).or_insert_with(|| v.clone());
                    }
                    continue;
                }
                let found = trie[cur]
                    .children
                    .iter()
                    .copied()
                    .find(|&c| trie[c].role == *role && trie[c].text == *text);
                cur = match found {
                    Some(c) => {
                        for (k, v) in metadata {
                            trie[c].metadata.entry(k.clone()).or_insert_with(|| v.clone());
                        }
                        c
                    }
                    None => {
                        let id = trie.len();
                        trie.push(TrieNode {
                            role: *role,
                            text: text.clone(),
                            metadata: metadata.clone(),
                            children: Vec::new(),
                        });
                        trie[cur].children.push(id);
                        id
                    }
                };
            }
        }
    }

    // Rebuild the tree with path-derived ids.
    let tree_id = short_digest(&["tree", root_text]);
    let mut nodes: Vec<OasstMessage> = Vec::new();
    let mut children: Vec<Vec<usize>> = Vec::new();
    let mut stack: Vec<(usize, Option<usize>, Vec<String>)> = vec![(0, None, Vec::new())];
    while let Some((tidx, parent, mut path)) = stack.pop() {
        let tn = &trie[tidx];
        path.push(format!("{}:{}", tn.role.as_str(), tn.text));
        let path_refs: Vec<&str> = std::iter::once(tree_id.as_str())
            .chain(path.iter().map(String::as_str))
            .collect();
        let message_id = short_digest(&path_refs);
        let idx = nodes.len();
        nodes.push(OasstMessage {
            message_id,
            parent_id: parent.map(|p: usize| nodes[p].message_id.clone()),
            role: tn.role,
            text: tn.text.clone(),
            lang: None,
            metadata: tn.metadata.clone(),
        });
        children.push(Vec::new());
        if let Some(p) = parent {
            children[p].push(idx);
        }
        for &c in trie[tidx].children.iter().rev() {
            stack.push((c, Some(idx), path.clone()));
        }
    }

    Ok(OasstTree {
        tree_id,
        nodes,
        children,
    })
}

pub fn tree_stats(tree: &OasstTree) -> TreeStats {
    let mut depth = 0;
    let mut branching = 0;
    let mut stack: Vec<(usize, usize)> = vec![(0, 1)];
    while let Some((idx, d)) = stack.pop() {
        depth = depth.max(d);
        branching = branching.max(tree.children[idx].len());
        for &c in &tree.children[idx] {
            stack.push((c, d + 1));
        }
    }
    TreeStats {
        depth,
        message_count: tree.nodes.len(),
        branching,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftExample {
    /// Path from root to the target's parent.
    pub context: Vec<OasstMessage>,
    pub target: OasstMessage,
}

/// One SFT example per assistant message, in depth-first order with siblings
/// ordered by message_id.
pub fn extract_sft(tree: &OasstTree) -> Vec<SftExample> {
    let mut out = Vec::new();
    let mut stack: Vec<(usize, Vec<usize>)> = vec![(0, Vec::new())];
    while let Some((idx, path)) = stack.pop() {
        let node = &tree.nodes[idx];
        if node.role == OasstRole::Assistant {
            out.push(SftExample {
                context: path.iter().map(|&i| tree.nodes[i].clone()).collect(),
                target: node.clone(),
            });
        }
        let mut next_path = path.clone();
        next_path.push(idx);
        // Reverse so the id-ordered first sibling pops first.
        for &c in tree.ordered_children(idx).iter().rev() {
            stack.push((c, next_path.clone()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub context: Vec<OasstMessage>,
    pub chosen: OasstMessage,
    pub rejected: OasstMessage,
}

/// Best-vs-each preference pairs from scored assistant siblings.
///
/// For each prompter node with two or more assistant children scored under
/// `quality_key`, the highest-scoring child is chosen and paired against
/// every strictly lower-scoring sibling; ties are skipped, unscored children
/// are skipped with a warning.
pub fn extract_dpo(tree: &OasstTree, quality_key: &str) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    let mut stack: Vec<(usize, Vec<usize>)> = vec![(0, Vec::new())];
    while let Some((idx, path)) = stack.pop() {
        let node = &tree.nodes[idx];
        if node.role == OasstRole::Prompter && tree.children[idx].len() >= 2 {
            let mut scored: Vec<(usize, f64)> = Vec::new();
            for &c in &tree.children[idx] {
                match tree.nodes[c].metadata.get(quality_key).and_then(|v| v.as_f64()) {
                    Some(s) => scored.push((c, s)),
                    None => log::warn!(
                        "dpo: assistant {} has no {quality_key} score, skipped",
                        tree.nodes[c].message_id
                    ),
                }
            }
            if scored.len() >= 2 {
                scored.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then_with(|| tree.nodes[a.0].message_id.cmp(&tree.nodes[b.0].message_id))
                });
                let (best_idx, best_score) = scored[0];
                let mut context: Vec<OasstMessage> =
                    path.iter().map(|&i| tree.nodes[i].clone()).collect();
                context.push(node.clone());
                for &(other, score) in &scored[1..] {
                    if score < best_score {
                        out.push(PreferencePair {
                            context: context.clone(),
                            chosen: tree.nodes[best_idx].clone(),
                            rejected: tree.nodes[other].clone(),
                        });
                    } else {
                        log::warn!(
                            "dpo: tie at {} ({score}), pair skipped",
                            tree.nodes[other].message_id
                        );
                    }
                }
            }
        }
        let mut next_path = path.clone();
        next_path.push(idx);
        for &c in tree.ordered_children(idx).iter().rev() {
            stack.push((c, next_path.clone()));
        }
    }
    out
}

/// `oasst.jsonl` lines: one message per line with fixed field names.
pub fn tree_to_jsonl_lines(tree: &OasstTree) -> Vec<String> {
    tree.nodes
        .iter()
        .map(|m| {
            let mut obj = Map::new();
            obj.insert("message_id".to_string(), Value::String(m.message_id.clone()));
            obj.insert(
                "parent_id".to_string(),
                m.parent_id.clone().map(Value::String).unwrap_or(Value::Null),
            );
            obj.insert("tree_id".to_string(), Value::String(tree.tree_id.clone()));
            obj.insert("role".to_string(), Value::String(m.role.as_str().to_string()));
            obj.insert("text".to_string(), Value::String(m.text.clone()));
            obj.insert(
                "lang".to_string(),
                m.lang.clone().map(Value::String).unwrap_or(Value::Null),
            );
            obj.insert("metadata".to_string(), Value::Object(m.metadata.clone()));
            Value::Object(obj).to_string()
        })
        .collect()
}

pub fn sft_to_jsonl_line(example: &SftExample) -> String {
    let context: Vec<Value> = example
        .context
        .iter()
        .map(|m| {
            serde_json::json!({
                "role": m.role.as_str(),
                "text": m.text,
            })
        })
        .collect();
    serde_json::json!({
        "context": context,
        "target": example.target.text,
    })
    .to_string()
}

pub fn dpo_to_jsonl_line(pair: &PreferencePair) -> String {
    let context: Vec<Value> = pair
        .context
        .iter()
        .map(|m| {
            serde_json::json!({
                "role": m.role.as_str(),
                "text": m.text,
            })
        })
        .collect();
    serde_json::json!({
        "context": context,
        "chosen": pair.chosen.text,
        "rejected": pair.rejected.text,
    })
    .to_string()
}

/// Build merged trees from output records: each record contributes its
/// conversation (under `conversation_key`), with the record id and any
/// quality score attached to the final assistant turn. Conversations sharing
/// a root merge into one tree.
pub fn build_trees(records: &[Record], conversation_key: &str) -> (Vec<OasstTree>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut chains: Vec<OasstTree> = Vec::new();
    for record in records {
        let Some(Value::Array(items)) = record.get(conversation_key) else {
            warnings.push(format!(
                "record {:?} has no {conversation_key:?} conversation, skipped",
                record.get("__index").cloned().unwrap_or(Value::Null)
            ));
            continue;
        };
        let mut turns: Vec<ConvTurn> = items.iter().filter_map(ConvTurn::from_value).collect();
        if let Some(last) = turns.iter_mut().rev().find(|t| t.role == "assistant") {
            if let Some(id) = record.get("__index").or_else(|| record.get("id")) {
                last.metadata.insert("record_id".to_string(), id.clone());
            }
            if let Some(score) = crate::quality::llm_score_of(record) {
                last.metadata
                    .insert("llm_score".to_string(), serde_json::json!(score));
            }
        }
        match to_tree(&turns) {
            Ok(t) => chains.push(t),
            Err(e) => warnings.push(format!("record conversion failed: {e}")),
        }
    }

    // Group by root text and merge each group.
    let mut groups: indexmap::IndexMap<String, Vec<OasstTree>> = indexmap::IndexMap::new();
    for c in chains {
        groups.entry(c.root().text.clone()).or_default().push(c);
    }
    let mut out = Vec::new();
    for (_, group) in groups {
        if group.len() == 1 {
            out.push(group.into_iter().next().unwrap());
        } else {
            match merge_trees(&group) {
                Ok(t) => out.push(t),
                Err(e) => warnings.push(format!("merge failed: {e}")),
            }
        }
    }
    (out, warnings)
}
