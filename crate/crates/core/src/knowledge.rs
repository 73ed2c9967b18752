//! Directed knowledge graphs and the retrieval operations exposed to the agent.
//!
//! The lexical graph is bipartite: `gloss:<id>` lexical-item nodes point to
//! `<kind>:<label>` phonological-component nodes. The linguistic graph is
//! ingested from a JSON node/edge file and queried by label substring.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{ComponentKind, DictionaryEntry, Phonology};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("duplicate gloss `{0}`")]
    DuplicateGloss(String),
    #[error("unknown {kind} label `{label}`")]
    UnknownComponentLabel { kind: ComponentKind, label: String },
    #[error("unknown gloss `{0}`")]
    UnknownGloss(String),
    #[error("dictionary is empty")]
    EmptyDictionary,
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("edge endpoint `{0}` does not exist")]
    DanglingEdge(String),
    #[error("graph file: {0}")]
    Io(#[from] std::io::Error),
    #[error("graph file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    LexicalItem,
    PhonologicalComponent,
    Concept,
    Feature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub node_id: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub properties: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub relation: String,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

/// Immutable directed graph with adjacency indices.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    index: BTreeMap<String, usize>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

pub fn lexical_node_id(gloss_id: &str) -> String {
    format!("gloss:{gloss_id}")
}

pub fn component_node_id(kind: ComponentKind, label: &str) -> String {
    format!("{}:{label}", kind.as_str())
}

fn relation_for(kind: ComponentKind) -> String {
    format!("has-{}", kind.as_str())
}

impl KnowledgeGraph {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.node_id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.node_id.clone()));
            }
        }
        let mut out_edges = vec![Vec::new(); nodes.len()];
        let mut in_edges = vec![Vec::new(); nodes.len()];
        for (ei, e) in edges.iter().enumerate() {
            let s = *index.get(&e.src).ok_or_else(|| GraphError::DanglingEdge(e.src.clone()))?;
            let d = *index.get(&e.dst).ok_or_else(|| GraphError::DanglingEdge(e.dst.clone()))?;
            out_edges[s].push(ei);
            in_edges[d].push(ei);
        }
        Ok(KnowledgeGraph { nodes, edges, index, out_edges, in_edges })
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let file: GraphFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(file.nodes, file.edges)
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        let file = GraphFile { nodes: self.nodes.clone(), edges: self.edges.clone() };
        std::fs::write(path, serde_json::to_string_pretty(&file)? + "\n")?;
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    fn out_of(&self, id: &str) -> impl Iterator<Item = &Edge> {
        self.index.get(id).into_iter().flat_map(move |&i| self.out_edges[i].iter().map(move |&e| &self.edges[e]))
    }

    fn into_node(&self, id: &str) -> impl Iterator<Item = &Edge> {
        self.index.get(id).into_iter().flat_map(move |&i| self.in_edges[i].iter().map(move |&e| &self.edges[e]))
    }

    /// Gloss ids of all lexical-item nodes, sorted.
    pub fn glosses(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::LexicalItem)
            .filter_map(|n| n.properties.get("gloss_id").cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Builds the bipartite lexical graph from dictionary entries.
pub fn build_lexical_graph(dictionary: &[DictionaryEntry]) -> Result<KnowledgeGraph, GraphError> {
    if dictionary.is_empty() {
        return Err(GraphError::EmptyDictionary);
    }
    let mut seen = BTreeSet::new();
    let mut nodes = Vec::new();
    let mut components: BTreeMap<String, Node> = BTreeMap::new();
    let mut edges = Vec::new();
    let mut sorted: Vec<&DictionaryEntry> = dictionary.iter().collect();
    sorted.sort_by(|a, b| a.gloss_id.cmp(&b.gloss_id));
    for entry in sorted {
        if !seen.insert(entry.gloss_id.as_str()) {
            return Err(GraphError::DuplicateGloss(entry.gloss_id.clone()));
        }
        let id = lexical_node_id(&entry.gloss_id);
        let mut properties = BTreeMap::new();
        properties.insert("gloss_id".to_string(), entry.gloss_id.clone());
        properties.insert(
            "handedness".to_string(),
            serde_json::to_value(entry.handedness)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
        );
        nodes.push(Node {
            node_id: id.clone(),
            kind: NodeKind::LexicalItem,
            labels: vec![entry.gloss_id.clone(), entry.gloss_word()],
            properties,
        });
        for (&kind, label) in &entry.canonical_phonology {
            if !kind.is_valid_label(label) {
                return Err(GraphError::UnknownComponentLabel { kind, label: label.clone() });
            }
            let cid = component_node_id(kind, label);
            components.entry(cid.clone()).or_insert_with(|| Node {
                node_id: cid.clone(),
                kind: NodeKind::PhonologicalComponent,
                labels: vec![label.clone()],
                properties: [
                    ("component".to_string(), kind.as_str().to_string()),
                    ("label".to_string(), label.clone()),
                ]
                .into(),
            });
            edges.push(Edge { src: id.clone(), dst: cid, relation: relation_for(kind) });
        }
    }
    nodes.extend(components.into_values());
    KnowledgeGraph::new(nodes, edges)
}

/// The canonical component map of a gloss, read back from its edges.
pub fn canonical_phonology(graph: &KnowledgeGraph, gloss_id: &str) -> Result<Phonology, GraphError> {
    let id = lexical_node_id(gloss_id);
    match graph.node(&id) {
        Some(n) if n.kind == NodeKind::LexicalItem => {}
        _ => return Err(GraphError::UnknownGloss(gloss_id.to_string())),
    }
    let mut out = Phonology::new();
    for e in graph.out_of(&id) {
        let Some(node) = graph.node(&e.dst) else { continue };
        if node.kind != NodeKind::PhonologicalComponent {
            continue;
        }
        let kind = node.properties.get("component").and_then(|k| k.parse::<ComponentKind>().ok());
        if let (Some(kind), Some(label)) = (kind, node.properties.get("label")) {
            out.insert(kind, label.clone());
        }
    }
    Ok(out)
}

/// Glosses ranked by how many of the allowed labels they carry.
///
/// `allowed` maps a component kind to a set of acceptable labels; a gloss
/// satisfies that kind when its canonical label is among them. Only glosses
/// with at least one satisfied kind are returned, unless `allowed` is empty,
/// in which case every gloss is returned with count 0.
pub fn glosses_matching(
    graph: &KnowledgeGraph,
    allowed: &BTreeMap<ComponentKind, Vec<String>>,
) -> Vec<(String, usize)> {
    if allowed.values().all(Vec::is_empty) {
        return graph.glosses().into_iter().map(|g| (g, 0)).collect();
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (&kind, labels) in allowed {
        let unique: BTreeSet<&String> = labels.iter().collect();
        for label in unique {
            for e in graph.into_node(&component_node_id(kind, label)) {
                if let Some(g) = graph.node(&e.src).and_then(|n| n.properties.get("gloss_id")) {
                    *counts.entry(g.clone()).or_default() += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Glosses sorted by number of satisfied constraints (desc), then gloss_id.
pub fn glosses_by_phonology(graph: &KnowledgeGraph, constraints: &Phonology) -> Vec<(String, usize)> {
    let allowed = constraints.iter().map(|(&k, l)| (k, vec![l.clone()])).collect();
    glosses_matching(graph, &allowed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedNode {
    pub node_id: String,
    pub match_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub matched_nodes: Vec<MatchedNode>,
    pub neighborhood: Vec<Edge>,
    pub query_terms: Vec<String>,
    pub radius: usize,
}

/// Substring retrieval over node labels with a radius-`r` edge closure.
///
/// The closure treats edges as undirected: it contains every edge incident to
/// a node whose hop distance from some match is below `radius`.
pub fn query_linguistic_graph(graph: &KnowledgeGraph, query_terms: &[String], radius: usize) -> RetrievalResult {
    let terms: Vec<String> = query_terms.iter().map(|t| t.trim().to_lowercase()).filter(|t| !t.is_empty()).collect();
    let mut matched: Vec<MatchedNode> = graph
        .nodes
        .iter()
        .filter_map(|n| {
            let labels: Vec<String> = n.labels.iter().map(|l| l.to_lowercase()).collect();
            let count = terms.iter().filter(|t| labels.iter().any(|l| l.contains(t.as_str()))).count();
            (count > 0).then(|| MatchedNode { node_id: n.node_id.clone(), match_count: count })
        })
        .collect();
    matched.sort_by(|a, b| b.match_count.cmp(&a.match_count).then_with(|| a.node_id.cmp(&b.node_id)));

    let mut dist: BTreeMap<usize, usize> = BTreeMap::new();
    let mut queue = VecDeque::new();
    for m in &matched {
        let i = graph.index[&m.node_id];
        dist.insert(i, 0);
        queue.push_back(i);
    }
    let mut edge_ids = BTreeSet::new();
    while let Some(i) = queue.pop_front() {
        let d = dist[&i];
        if d >= radius {
            continue;
        }
        for &ei in graph.out_edges[i].iter().chain(&graph.in_edges[i]) {
            edge_ids.insert(ei);
            let e = &graph.edges[ei];
            for end in [&e.src, &e.dst] {
                let j = graph.index[end];
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(j) {
                    e.insert(d + 1);
                    queue.push_back(j);
                }
            }
        }
    }
    let mut neighborhood: Vec<Edge> = edge_ids.into_iter().map(|ei| graph.edges[ei].clone()).collect();
    neighborhood.sort();
    RetrievalResult { matched_nodes: matched, neighborhood, query_terms: query_terms.to_vec(), radius }
}
