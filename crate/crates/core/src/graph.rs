//! Memory nodes, per-level weighted graphs, and the chunk-level expansion
//! step that wires each new chunk to its best-scoring predecessors.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::config::EngineConfig;
use crate::embedding::{cosine, Embedding};
use crate::error::{CamError, Result};
use crate::ids::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Chunk { doc_id: String, seq_index: u64 },
    /// Summary of a cluster of nodes one level down.
    Abstraction { members: BTreeSet<NodeId> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub text: String,
    pub embedding: Embedding,
}

impl MemoryNode {
    pub fn chunk(index: u64, doc_id: impl Into<String>, seq_index: u64, text: impl Into<String>, embedding: Embedding) -> Self {
        Self {
            id: NodeId::chunk(index),
            kind: NodeKind::Chunk { doc_id: doc_id.into(), seq_index },
            text: text.into(),
            embedding,
        }
    }

    pub fn level(&self) -> u32 {
        self.id.level
    }

    pub fn doc_id(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Chunk { doc_id, .. } => Some(doc_id),
            NodeKind::Abstraction { .. } => None,
        }
    }

    pub fn seq_index(&self) -> Option<u64> {
        match &self.kind {
            NodeKind::Chunk { seq_index, .. } => Some(*seq_index),
            NodeKind::Abstraction { .. } => None,
        }
    }

    pub fn members(&self) -> Option<&BTreeSet<NodeId>> {
        match &self.kind {
            NodeKind::Abstraction { members } => Some(members),
            NodeKind::Chunk { .. } => None,
        }
    }
}

/// Undirected weighted adjacency among the nodes of one level. Every node of
/// the level is a key, isolated or not.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelGraph {
    pub level: u32,
    adjacency: BTreeMap<NodeId, BTreeMap<NodeId, f64>>,
    edge_count: usize,
}

impl LevelGraph {
    pub fn new(level: u32) -> Self {
        Self { level, adjacency: BTreeMap::new(), edge_count: 0 }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.adjacency.contains_key(&v)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.adjacency.get(&v).into_iter().flat_map(|m| m.iter().map(|(u, w)| (*u, *w)))
    }

    pub fn neighbor_map(&self, v: NodeId) -> Option<&BTreeMap<NodeId, f64>> {
        self.adjacency.get(&v)
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency.get(&v).map_or(0, BTreeMap::len)
    }

    pub fn weight(&self, u: NodeId, v: NodeId) -> Option<f64> {
        self.adjacency.get(&u).and_then(|m| m.get(&v)).copied()
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.weight(u, v).is_some()
    }

    /// Every edge once, as `(u, v, w)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.adjacency
            .iter()
            .flat_map(|(u, m)| m.range(*u..).filter(move |(v, _)| *v != u).map(move |(v, w)| (*u, *v, *w)))
    }

    pub fn add_node(&mut self, v: NodeId) {
        self.adjacency.entry(v).or_default();
    }

    /// Removes `v` and returns the neighbors it was connected to.
    pub fn remove_node(&mut self, v: NodeId) -> Vec<NodeId> {
        let Some(nbrs) = self.adjacency.remove(&v) else {
            return Vec::new();
        };
        for u in nbrs.keys() {
            if let Some(m) = self.adjacency.get_mut(u) {
                m.remove(&v);
            }
        }
        self.edge_count -= nbrs.len();
        nbrs.into_keys().collect()
    }

    /// Inserts or re-weights an undirected edge. Self-loops are ignored.
    /// Returns true when the edge is new.
    pub fn upsert_edge(&mut self, u: NodeId, v: NodeId, w: f64) -> bool {
        if u == v {
            return false;
        }
        let fresh = self.adjacency.entry(u).or_default().insert(v, w).is_none();
        self.adjacency.entry(v).or_default().insert(u, w);
        if fresh {
            self.edge_count += 1;
        }
        fresh
    }

    pub fn remove_edge(&mut self, u: NodeId, v: NodeId) -> bool {
        let removed = self.adjacency.get_mut(&u).is_some_and(|m| m.remove(&v).is_some());
        if removed {
            if let Some(m) = self.adjacency.get_mut(&v) {
                m.remove(&u);
            }
            self.edge_count -= 1;
        }
        removed
    }

    /// Applies a topology change and returns the nodes whose ego-networks may
    /// differ afterwards: added and removed nodes, endpoints of added or
    /// removed edges, and common neighbors of those endpoints. Common
    /// neighbors matter only when an edge appears or vanishes between two
    /// pre-existing nodes, which never happens at level 0.
    pub fn apply(&mut self, delta: &GraphDelta) -> BTreeSet<NodeId> {
        let mut affected = BTreeSet::new();
        for &(u, v) in &delta.removed_edges {
            if self.has_edge(u, v) {
                affected.extend([u, v]);
                affected.extend(self.common_neighbors(u, v));
                self.remove_edge(u, v);
            }
        }
        for &v in &delta.removed_nodes {
            if self.contains(v) {
                let nbrs: Vec<NodeId> = self.neighbors(v).map(|(u, _)| u).collect();
                for &u in &nbrs {
                    affected.extend(self.common_neighbors(u, v));
                }
                affected.extend(nbrs);
                self.remove_node(v);
                affected.insert(v);
            }
        }
        for &v in &delta.added_nodes {
            self.add_node(v);
            affected.insert(v);
        }
        for &(u, v, w) in &delta.upserted_edges {
            if self.upsert_edge(u, v, w) {
                affected.extend([u, v]);
                affected.extend(self.common_neighbors(u, v));
            }
        }
        affected
    }

    fn common_neighbors(&self, u: NodeId, v: NodeId) -> Vec<NodeId> {
        match (self.adjacency.get(&u), self.adjacency.get(&v)) {
            (Some(a), Some(b)) => {
                let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
                small.keys().filter(|x| large.contains_key(x)).copied().collect()
            }
            _ => Vec::new(),
        }
    }
}

/// A batch of topology edits for one level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphDelta {
    pub added_nodes: Vec<NodeId>,
    pub removed_nodes: Vec<NodeId>,
    /// New edges, or new weights for existing ones.
    pub upserted_edges: Vec<(NodeId, NodeId, f64)>,
    pub removed_edges: Vec<(NodeId, NodeId)>,
}

impl GraphDelta {
    pub fn is_empty(&self) -> bool {
        self.added_nodes.is_empty()
            && self.removed_nodes.is_empty()
            && self.upserted_edges.is_empty()
            && self.removed_edges.is_empty()
    }
}

/// Positional proximity of two chunks of the same document.
pub fn proximity(i: u64, j: u64, sigma: f64) -> f64 {
    let d = i.abs_diff(j) as f64;
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

/// Composite chunk similarity: `alpha * max(cos, 0) + (1 - alpha) * proximity`,
/// where proximity is zero across documents.
pub fn pair_score(a: &MemoryNode, b: &MemoryNode, cfg: &EngineConfig) -> Result<f64> {
    let (
        NodeKind::Chunk { doc_id: da, seq_index: ia },
        NodeKind::Chunk { doc_id: db, seq_index: ib },
    ) = (&a.kind, &b.kind)
    else {
        let culprit = if matches!(a.kind, NodeKind::Chunk { .. }) { b.id } else { a.id };
        return Err(CamError::NotAChunk(culprit));
    };
    if a.embedding.dim() != b.embedding.dim() {
        return Err(CamError::DimensionMismatch { left: a.embedding.dim(), right: b.embedding.dim() });
    }
    let semantic = cosine(&a.embedding, &b.embedding).max(0.0);
    let positional = if da == db { proximity(*ia, *ib, cfg.sigma) } else { 0.0 };
    Ok(cfg.alpha * semantic + (1.0 - cfg.alpha) * positional)
}

/// Nodes and edges produced by integrating a batch of chunks at level 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpansionDelta {
    pub new_nodes: Vec<NodeId>,
    /// `(u, v, w)` with `u < v`, sorted.
    pub new_edges: Vec<(NodeId, NodeId, f64)>,
}

impl ExpansionDelta {
    pub fn to_graph_delta(&self) -> GraphDelta {
        GraphDelta { added_nodes: self.new_nodes.clone(), upserted_edges: self.new_edges.clone(), ..Default::default() }
    }
}

/// Scores each new chunk against every node that precedes it in arrival
/// order (all existing nodes plus earlier chunks of the same batch), keeps
/// candidates scoring strictly above `theta`, and links the chunk to the
/// best `k` of them (ties broken by ascending id). Reads only; the caller
/// applies the delta.
pub fn expand(
    existing: &BTreeMap<NodeId, MemoryNode>,
    new_nodes: &[MemoryNode],
    cfg: &EngineConfig,
) -> Result<ExpansionDelta> {
    let prior: Vec<&MemoryNode> = existing.values().collect();
    let per_chunk: Vec<Vec<(NodeId, f64)>> = new_nodes
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let pool = prior.iter().copied().chain(new_nodes[..i].iter());
            let mut cands = Vec::new();
            for u in pool {
                let s = pair_score(v, u, cfg)?;
                if s > cfg.theta {
                    cands.push((u.id, s));
                }
            }
            Ok(top_k(cands, cfg.k))
        })
        .collect::<Result<_>>()?;

    let mut edges: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    for (v, picks) in new_nodes.iter().zip(per_chunk) {
        for (u, w) in picks {
            edges.insert((v.id.min(u), v.id.max(u)), w);
        }
    }
    Ok(ExpansionDelta {
        new_nodes: new_nodes.iter().map(|n| n.id).collect(),
        new_edges: edges.into_iter().map(|((u, v), w)| (u, v, w)).collect(),
    })
}

fn top_k(mut cands: Vec<(NodeId, f64)>, k: usize) -> Vec<(NodeId, f64)> {
    let order = |a: &(NodeId, f64), b: &(NodeId, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, order);
        cands.truncate(k);
    }
    cands.sort_by(order);
    cands
}

/// New nodes plus the pre-existing endpoints of new edges.
pub fn affected_set(delta: &ExpansionDelta) -> BTreeSet<NodeId> {
    delta
        .new_nodes
        .iter()
        .copied()
        .chain(delta.new_edges.iter().flat_map(|&(u, v, _)| [u, v]))
        .collect()
}
