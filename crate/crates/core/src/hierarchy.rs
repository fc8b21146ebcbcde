//! The layered memory and its per-batch development procedure.
//!
//! A batch of chunks is integrated in three steps: new chunks are wired into
//! the level-0 graph, the replicas of the affected nodes are rebuilt, and
//! label propagation updates the clustering of the replica network. Every
//! modified cluster then refreshes its abstraction node one level up, and
//! the resulting changes of that level re-run the last two steps there,
//! until a level sees no change or is too small to deserve a parent.
//!
//! Abstraction nodes are keyed by the label of the cluster they summarize,
//! so a cluster that evolves keeps editing the same node. Edges above level
//! 0 come only from replica edges that cross clusters.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::Serialize;

use crate::cluster::{self, ChangeKind, ClusterChange, ClusterRegistry, Propagation};
use crate::config::EngineConfig;
use crate::corpus::Chunk;
use crate::ego_split::{self, ReplicaNetwork};
use crate::embedding::Embedding;
use crate::error::{CamError, Result};
use crate::graph::{self, GraphDelta, LevelGraph, MemoryNode, NodeKind};
use crate::ids::{ClusterLabel, NodeId, ReplicaId};
use crate::providers::{Embedder, LanguageModel};

/// Graph, nodes, replicas and clusters of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub graph: LevelGraph,
    pub nodes: BTreeMap<NodeId, MemoryNode>,
    pub replicas: ReplicaNetwork,
    pub registry: ClusterRegistry,
}

impl Level {
    pub fn new(level: u32) -> Self {
        Self {
            graph: LevelGraph::new(level),
            nodes: BTreeMap::new(),
            replicas: ReplicaNetwork::new(level),
            registry: ClusterRegistry::new(level),
        }
    }

    pub fn index(&self) -> u32 {
        self.graph.level
    }
}

/// Abstraction node standing for `label` of the level below.
pub fn abstraction_id(child_level: u32, label: ClusterLabel) -> NodeId {
    NodeId::new(child_level + 1, label.0)
}

/// Many-to-many map from the nodes of one level to their parents.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UpwardMapping {
    pub level: u32,
    pub map: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

/// Replica sets observed during one level's update, kept only when locality
/// tracing is on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalityTrace {
    pub affected: BTreeSet<NodeId>,
    pub recomputed: Vec<NodeId>,
    pub seed: BTreeSet<ReplicaId>,
    pub active: BTreeSet<ReplicaId>,
    pub reads: BTreeSet<ReplicaId>,
    /// Replica network right after propagation, before connectivity repair.
    pub network: Option<ReplicaNetwork>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LevelReport {
    pub level: u32,
    pub nodes_added: usize,
    pub nodes_removed: usize,
    pub edges_added: usize,
    pub edges_removed: usize,
    pub affected: usize,
    pub replicas_recomputed: usize,
    pub replicas_added: usize,
    pub replicas_removed: usize,
    pub labels_minted: usize,
    pub label_changes: usize,
    pub lp_rounds: usize,
    pub lp_sweeps: usize,
    pub clusters_modified: usize,
    pub clusters_created: usize,
    pub clusters_dissolved: usize,
    /// Summarizer calls made for abstractions of this level's clusters.
    pub summaries_regenerated: usize,
    pub expand_s: f64,
    pub replicas_s: f64,
    pub clustering_s: f64,
    pub abstraction_s: f64,
    #[serde(skip)]
    pub locality: Option<LocalityTrace>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UpdateReport {
    pub chunks: usize,
    pub levels: Vec<LevelReport>,
    pub embed_s: f64,
    pub total_s: f64,
}

impl UpdateReport {
    pub fn level(&self, l: u32) -> Option<&LevelReport> {
        self.levels.iter().find(|r| r.level == l)
    }

    pub fn summaries(&self) -> usize {
        self.levels.iter().map(|l| l.summaries_regenerated).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryHierarchy {
    config: EngineConfig,
    levels: Vec<Level>,
    trace_locality: bool,
}

impl MemoryHierarchy {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, levels: vec![Level::new(0)], trace_locality: false })
    }

    /// Reassembles a hierarchy from stored parts and checks it.
    pub fn from_levels(config: EngineConfig, levels: Vec<Level>) -> Result<Self> {
        config.validate()?;
        let levels = if levels.is_empty() { vec![Level::new(0)] } else { levels };
        let h = Self { config, levels, trace_locality: false };
        h.check_consistency()?;
        Ok(h)
    }

    /// Keeps replica-level locality traces in every [`UpdateReport`].
    pub fn set_locality_tracing(&mut self, on: bool) {
        self.trace_locality = on;
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level(&self, l: u32) -> Option<&Level> {
        self.levels.get(l as usize)
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn node(&self, id: NodeId) -> Option<&MemoryNode> {
        self.level(id.level).and_then(|l| l.nodes.get(&id))
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(|l| l.nodes.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.node_count() == 0
    }

    pub fn all_nodes(&self) -> impl Iterator<Item = &MemoryNode> {
        self.levels.iter().flat_map(|l| l.nodes.values())
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.all_nodes().next().map(|n| n.embedding.dim())
    }

    /// Whether `level` gets a parent level: it needs more clusters and more
    /// nodes than `min_level_size`, and fewer clusters than nodes so that the
    /// hierarchy keeps shrinking.
    pub fn level_should_grow(&self, level: u32) -> Result<bool> {
        let lvl = self.level(level).ok_or(CamError::UnknownLevel(level))?;
        Ok(should_grow(lvl.registry.cluster_count(), lvl.graph.node_count(), self.config.min_level_size))
    }

    /// Parents of `node` one level up; empty at the top level.
    pub fn psi(&self, level: u32, node: NodeId) -> Result<BTreeSet<NodeId>> {
        let lvl = self.level(level).ok_or(CamError::UnknownLevel(level))?;
        if node.level != level || !lvl.nodes.contains_key(&node) {
            return Err(CamError::UnknownNode(node));
        }
        if self.levels.len() <= level as usize + 1 {
            return Ok(BTreeSet::new());
        }
        Ok(lvl
            .replicas
            .replicas_of(node)
            .iter()
            .filter_map(|r| lvl.replicas.label(r.id))
            .map(|l| abstraction_id(level, l))
            .collect())
    }

    pub fn upward(&self, level: u32) -> Result<UpwardMapping> {
        let lvl = self.level(level).ok_or(CamError::UnknownLevel(level))?;
        let mut map = BTreeMap::new();
        for &v in lvl.nodes.keys() {
            let parents = self.psi(level, v)?;
            if !parents.is_empty() {
                map.insert(v, parents);
            }
        }
        Ok(UpwardMapping { level, map })
    }

    /// Integrates a batch of chunks. The batch is atomic: on any error the
    /// hierarchy is left exactly as it was.
    pub fn integrate_batch(&mut self, chunks: &[Chunk], embedder: &dyn Embedder, llm: &dyn LanguageModel) -> Result<UpdateReport> {
        if chunks.is_empty() {
            return Ok(UpdateReport::default());
        }
        let mut work = self.clone();
        let report = work.develop(chunks, embedder, llm)?;
        *self = work;
        Ok(report)
    }

    pub(crate) fn develop(&mut self, chunks: &[Chunk], embedder: &dyn Embedder, llm: &dyn LanguageModel) -> Result<UpdateReport> {
        let started = Instant::now();
        let mut report = UpdateReport { chunks: chunks.len(), ..Default::default() };

        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let t = Instant::now();
        let embeddings = embedder.embed_batch(&texts)?;
        report.embed_s = t.elapsed().as_secs_f64();
        self.check_dims(&embeddings)?;

        let base = self.levels[0].nodes.keys().next_back().map_or(0, |id| id.index + 1);
        let new_nodes: Vec<MemoryNode> = chunks
            .iter()
            .zip(embeddings)
            .enumerate()
            .map(|(i, (c, e))| MemoryNode::chunk(base + i as u64, c.doc_id.clone(), c.seq_index, c.text.clone(), e))
            .collect();

        let t = Instant::now();
        let expansion = graph::expand(&self.levels[0].nodes, &new_nodes, &self.config)?;
        let expand_s = t.elapsed().as_secs_f64();
        for n in new_nodes {
            self.levels[0].nodes.insert(n.id, n);
        }

        let mut delta = expansion.to_graph_delta();
        let mut text_changed = BTreeSet::new();
        let mut level = 0u32;
        loop {
            let (mut lr, changes) = self.update_level(level, &delta, &text_changed)?;
            if level == 0 {
                lr.expand_s = expand_s;
            }

            if !self.level_should_grow(level)? {
                self.levels.truncate(level as usize + 1);
                report.levels.push(lr);
                break;
            }
            let t = Instant::now();
            let changes = if self.levels.len() == level as usize + 1 {
                self.levels.push(Level::new(level + 1));
                self.all_clusters_created(level)
            } else {
                changes
            };
            let (next_delta, next_changed, summaries) = self.refresh_abstractions(level, &changes, &text_changed, embedder, llm)?;
            lr.summaries_regenerated = summaries;
            lr.abstraction_s = t.elapsed().as_secs_f64();
            report.levels.push(lr);

            if next_delta.is_empty() && next_changed.is_empty() {
                break;
            }
            delta = next_delta;
            text_changed = next_changed;
            level += 1;
        }
        report.total_s = started.elapsed().as_secs_f64();
        Ok(report)
    }

    fn check_dims(&self, embeddings: &[Embedding]) -> Result<()> {
        let expected = self.embedding_dim().or_else(|| embeddings.first().map(Embedding::dim));
        if let Some(d) = expected {
            if let Some(bad) = embeddings.iter().find(|e| e.dim() != d) {
                return Err(CamError::DimensionMismatch { left: d, right: bad.dim() });
            }
        }
        Ok(())
    }

    /// Steps 2 and 3 at one level, after applying `delta` to its graph.
    fn update_level(
        &mut self,
        level: u32,
        delta: &GraphDelta,
        text_changed: &BTreeSet<NodeId>,
    ) -> Result<(LevelReport, Vec<ClusterChange>)> {
        let trace = self.trace_locality;
        let max_iters = self.config.max_lp_iters;
        let lvl = &mut self.levels[level as usize];
        let mut lr = LevelReport {
            level,
            nodes_added: delta.added_nodes.len(),
            nodes_removed: delta.removed_nodes.len(),
            edges_removed: delta.removed_edges.len(),
            ..Default::default()
        };

        let reweighted: Vec<NodeId> = delta
            .upserted_edges
            .iter()
            .filter(|(u, v, w)| lvl.graph.weight(*u, *v).is_some_and(|old| old != *w))
            .flat_map(|(u, v, _)| [*u, *v])
            .collect();
        let edges_before = lvl.graph.edge_count();
        let affected = lvl.graph.apply(delta);
        lr.edges_added = (lvl.graph.edge_count() + lr.edges_removed).saturating_sub(edges_before);
        lr.affected = affected.len();

        let t = Instant::now();
        let rdelta = ego_split::rebuild_replicas(&affected, &lvl.graph, &mut lvl.replicas)?;
        lvl.registry.absorb(&rdelta, &lvl.replicas);
        lr.replicas_s = t.elapsed().as_secs_f64();
        lr.replicas_recomputed = rdelta.recomputed.len();
        lr.replicas_added = rdelta.added.len();
        lr.replicas_removed = rdelta.removed.len();

        let t = Instant::now();
        let added: BTreeSet<ReplicaId> = rdelta.added.iter().copied().collect();
        lr.labels_minted = cluster::init_labels(&added, &mut lvl.replicas, &mut lvl.registry);
        let seed = rdelta.touched_replicas(&lvl.replicas);
        let prop: Propagation = if trace {
            cluster::propagate_traced(&seed, &mut lvl.replicas, &mut lvl.registry, max_iters)
        } else {
            cluster::propagate(&seed, &mut lvl.replicas, &mut lvl.registry, max_iters)
        };
        lr.label_changes = prop.label_changes;
        lr.lp_rounds = prop.sync_rounds;
        lr.lp_sweeps = prop.sweeps;
        let snapshot = trace.then(|| lvl.replicas.clone());
        lvl.registry.mark_nodes_dirty(text_changed.iter().copied().chain(reweighted), &lvl.replicas);
        let dirty = lvl.registry.dirty.clone();
        let changes = cluster::finalize(&dirty, &mut lvl.replicas, &mut lvl.registry);
        lr.clustering_s = t.elapsed().as_secs_f64();
        lr.clusters_modified = changes.len();
        lr.clusters_created = changes.iter().filter(|c| c.kind == ChangeKind::Created).count();
        lr.clusters_dissolved = changes.iter().filter(|c| c.kind == ChangeKind::Dissolved).count();
        if trace {
            lr.locality = Some(LocalityTrace {
                affected,
                recomputed: rdelta.recomputed.clone(),
                seed,
                active: prop.active,
                reads: prop.reads.unwrap_or_default(),
                network: snapshot,
            });
        }
        Ok((lr, changes))
    }

    fn all_clusters_created(&self, level: u32) -> Vec<ClusterChange> {
        self.levels[level as usize]
            .registry
            .members
            .iter()
            .map(|(l, reps)| ClusterChange {
                label: *l,
                members: reps.iter().map(|r| r.node).collect(),
                kind: ChangeKind::Created,
            })
            .collect()
    }

    /// Brings the abstraction nodes above `level` in line with `changes`.
    /// Returns the graph delta and the text-changed nodes for the level above,
    /// plus the number of summarizer calls made.
    fn refresh_abstractions(
        &mut self,
        level: u32,
        changes: &[ClusterChange],
        text_changed_below: &BTreeSet<NodeId>,
        embedder: &dyn Embedder,
        llm: &dyn LanguageModel,
    ) -> Result<(GraphDelta, BTreeSet<NodeId>, usize)> {
        let (lower, upper) = self.levels.split_at_mut(level as usize + 1);
        let below = &lower[level as usize];
        let above = &mut upper[0];
        let mut delta = GraphDelta::default();
        let mut text_changed = BTreeSet::new();

        // Which clusters need new text: created ones, and updated ones whose
        // member set or member texts changed.
        let mut pending: Vec<(NodeId, BTreeSet<NodeId>)> = Vec::new();
        for c in changes {
            let id = abstraction_id(level, c.label);
            match c.kind {
                ChangeKind::Dissolved => {
                    if above.nodes.remove(&id).is_some() {
                        delta.removed_nodes.push(id);
                    }
                }
                ChangeKind::Created | ChangeKind::Updated => {
                    let stale = match above.nodes.get(&id).and_then(MemoryNode::members) {
                        None => {
                            delta.added_nodes.push(id);
                            true
                        }
                        Some(old) => *old != c.members || !c.members.is_disjoint(text_changed_below),
                    };
                    if stale {
                        pending.push((id, c.members.clone()));
                    }
                }
            }
        }

        let mut summaries = 0;
        let mut fresh_text: Vec<(NodeId, BTreeSet<NodeId>, String, Option<Embedding>)> = Vec::new();
        for (id, members) in pending {
            if members.len() == 1 {
                let m = &below.nodes[members.first().unwrap()];
                fresh_text.push((id, members, m.text.clone(), Some(m.embedding.clone())));
            } else {
                let texts: Vec<String> = members.iter().map(|m| below.nodes[m].text.clone()).collect();
                let summary = llm.summarize(&texts, level + 1)?;
                summaries += 1;
                fresh_text.push((id, members, summary, None));
            }
        }
        let to_embed: Vec<String> = fresh_text.iter().filter(|f| f.3.is_none()).map(|f| f.2.clone()).collect();
        let mut embedded = embedder.embed_batch(&to_embed)?.into_iter();
        for (id, members, text, emb) in fresh_text {
            let embedding = match emb {
                Some(e) => e,
                None => embedded.next().ok_or_else(|| {
                    crate::error::ProviderError::Protocol("embedder returned too few vectors".into())
                })?,
            };
            let changed = above.nodes.get(&id).is_some_and(|old| old.text != text);
            if changed {
                text_changed.insert(id);
            }
            above.nodes.insert(id, MemoryNode { id, kind: NodeKind::Abstraction { members }, text, embedding });
        }

        // Inter-cluster edges, recomputed from the side of every live changed cluster.
        let rn = &below.replicas;
        for c in changes.iter().filter(|c| c.kind != ChangeKind::Dissolved) {
            let id = abstraction_id(level, c.label);
            let mut wanted: BTreeMap<NodeId, f64> = BTreeMap::new();
            for r in below.registry.members.get(&c.label).into_iter().flatten() {
                for n in rn.neighbors(*r) {
                    let Some(other) = rn.label(n).filter(|l| *l != c.label) else { continue };
                    let w = below.graph.weight(r.node, n.node).unwrap_or(0.0);
                    let slot = wanted.entry(abstraction_id(level, other)).or_insert(w);
                    *slot = slot.max(w);
                }
            }
            for (other, w) in &wanted {
                if above.graph.weight(id, *other) != Some(*w) {
                    delta.upserted_edges.push((id.min(*other), id.max(*other), *w));
                }
            }
            for (other, _) in above.graph.neighbors(id) {
                if !wanted.contains_key(&other) {
                    delta.removed_edges.push((id.min(other), id.max(other)));
                }
            }
        }
        delta.upserted_edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        delta.upserted_edges.dedup_by(|a, b| (a.0, a.1) == (b.0, b.1));
        delta.removed_edges.sort();
        delta.removed_edges.dedup();
        Ok((delta, text_changed, summaries))
    }
}

pub(crate) fn should_grow(clusters: usize, nodes: usize, min_level_size: usize) -> bool {
    clusters > min_level_size && nodes > min_level_size && clusters < nodes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Chunk;
    use crate::providers::{CallCounter, FaultInjector, StubEmbedder, StubLanguageModel};
    use crate::synthetic;

    fn stubs() -> (StubEmbedder, StubLanguageModel) {
        (StubEmbedder::default(), StubLanguageModel::default())
    }

    fn butterfly_chunks() -> Vec<Chunk> {
        ["apple orchard", "orchard apple", "apple orchard river delta", "river delta", "delta river"]
            .iter()
            .enumerate()
            .map(|(i, t)| Chunk::new("bf", i as u64, *t))
            .collect()
    }

    fn small_config() -> EngineConfig {
        EngineConfig { min_level_size: 1, ..EngineConfig::default() }
    }

    #[test]
    fn empty_batch_is_a_no_op() {
        let (e, m) = stubs();
        let mut h = MemoryHierarchy::new(EngineConfig::default()).unwrap();
        let r = h.integrate_batch(&[], &e, &m).unwrap();
        assert_eq!(r, UpdateReport::default());
        assert!(h.is_empty());
        h.check_consistency().unwrap();
    }

    #[test]
    fn butterfly_center_has_two_parents() {
        let (e, m) = stubs();
        let mut h = MemoryHierarchy::new(small_config()).unwrap();
        h.integrate_batch(&butterfly_chunks(), &e, &m).unwrap();
        h.check_consistency().unwrap();
        assert_eq!(h.depth(), 2);
        let l0 = h.level(0).unwrap();
        assert_eq!(l0.graph.edge_count(), 6);
        assert_eq!(h.psi(0, NodeId::chunk(2)).unwrap().len(), 2);
        assert_eq!(h.psi(0, NodeId::chunk(0)).unwrap().len(), 1);
        let top = h.level(1).unwrap().nodes.keys().next().copied().unwrap();
        assert!(h.psi(1, top).unwrap().is_empty());
        assert!(matches!(h.psi(0, NodeId::chunk(99)), Err(CamError::UnknownNode(_))));
    }

    #[test]
    fn growth_rule() {
        assert!(!should_grow(3, 3, 4));
        assert!(should_grow(12, 100, 4));
        assert!(!should_grow(4, 100, 4));
        assert!(!should_grow(10, 10, 4));
    }

    #[test]
    fn topic_corpus_builds_two_levels() {
        let (e, m) = stubs();
        let mut h = MemoryHierarchy::new(EngineConfig::default()).unwrap();
        let r = h.integrate_batch(&synthetic::topic_blocks(4, 50, 11), &e, &m).unwrap();
        h.check_consistency().unwrap();
        assert!(h.depth() >= 2, "depth {}", h.depth());
        let l1 = h.level(1).unwrap();
        let clusters = l1.registry.cluster_count();
        assert!((4..=40).contains(&clusters), "level-1 clusters {clusters}");
        assert_eq!((l1.nodes.len(), clusters), (19, 19));
        assert_eq!(r.level(0).unwrap().nodes_added, 200);
    }

    #[test]
    fn single_chunk_batches_merge_blended_subtopics() {
        // Each arriving chunk adopts the majority label of its neighbors, so
        // weakly separated subtopics collapse into one cluster per topic when
        // they arrive one chunk at a time, while one large batch keeps them
        // apart.
        let chunks = synthetic::topic_blocks_with(4, 50, 11, synthetic::SentenceMix::BLURRED);
        let (e, m) = stubs();
        let mut single = MemoryHierarchy::new(EngineConfig::default()).unwrap();
        for c in chunks.chunks(1) {
            single.integrate_batch(c, &e, &m).unwrap();
        }
        let mut bulk = MemoryHierarchy::new(EngineConfig::default()).unwrap();
        bulk.integrate_batch(&chunks, &e, &m).unwrap();
        assert_eq!(single.level(0).unwrap().registry.cluster_count(), 4);
        assert_eq!(single.depth(), 1);
        assert!(bulk.level(0).unwrap().registry.cluster_count() > 4);
        assert!(bulk.depth() >= 2);
    }

    #[test]
    fn batching_schedule_does_not_change_level_zero() {
        let (e, m) = stubs();
        let chunks = synthetic::topic_blocks(4, 50, 11);
        let mut one = MemoryHierarchy::new(EngineConfig::default()).unwrap();
        one.integrate_batch(&chunks, &e, &m).unwrap();
        let mut many = MemoryHierarchy::new(EngineConfig::default()).unwrap();
        for b in chunks.chunks(20) {
            many.integrate_batch(b, &e, &m).unwrap();
            many.check_consistency().unwrap();
        }
        let (a, b) = (one.level(0).unwrap(), many.level(0).unwrap());
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.replicas.structure(), b.replicas.structure());
    }

    #[test]
    fn failed_batch_leaves_state_untouched() {
        let (e, m) = stubs();
        let chunks = synthetic::topic_blocks(4, 30, 2);
        let mut h = MemoryHierarchy::new(EngineConfig::default()).unwrap();
        h.integrate_batch(&chunks[..60], &e, &m).unwrap();
        let before = h.clone();
        let dry = FaultInjector::new(m.clone(), None);
        h.clone().integrate_batch(&chunks[60..], &e, &dry).unwrap();
        assert!(dry.calls() > 0);
        for fail_at in 0..dry.calls() {
            let fm = FaultInjector::new(m.clone(), Some(fail_at));
            assert!(h.integrate_batch(&chunks[60..], &e, &fm).is_err());
            assert_eq!(h, before);
        }
        let fe = FaultInjector::new(e.clone(), Some(1));
        assert!(h.integrate_batch(&chunks[60..], &fe, &m).is_err());
        assert_eq!(h, before);
    }

    #[test]
    fn singleton_clusters_are_promoted_without_summaries() {
        let (e, m) = stubs();
        let counted = CallCounter::new(m);
        let chunks: Vec<Chunk> = ["alpha beta", "gamma delta", "epsilon zeta"]
            .iter()
            .enumerate()
            .map(|(i, t)| Chunk::new(format!("d{i}"), 0, *t))
            .collect();
        let mut h = MemoryHierarchy::new(EngineConfig { min_level_size: 1, ..Default::default() }).unwrap();
        h.integrate_batch(&chunks, &e, &counted).unwrap();
        h.check_consistency().unwrap();
        // Three isolated chunks form three clusters, which is not fewer than
        // the node count, so no level is built above them.
        assert_eq!(h.depth(), 1);
        assert_eq!(counted.summarize_count(), 0);
    }

    #[test]
    fn an_extra_member_costs_one_summary() {
        let (e, m) = stubs();
        let counted = CallCounter::new(m);
        let mut h = MemoryHierarchy::new(small_config()).unwrap();
        let bf = butterfly_chunks();
        h.integrate_batch(&bf, &e, &counted).unwrap();
        let before = counted.summarize_count();
        let extra = Chunk::new("bf", 5, "river delta river");
        let r = h.integrate_batch(&[extra], &e, &counted).unwrap();
        h.check_consistency().unwrap();
        assert_eq!(counted.summarize_count() - before, 1);
        assert_eq!(r.summaries(), 1);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = StubLanguageModel::default();
        let mut h = MemoryHierarchy::new(EngineConfig::default()).unwrap();
        h.integrate_batch(&[Chunk::new("a", 0, "one two")], &StubEmbedder::new(16), &m).unwrap();
        let err = h.integrate_batch(&[Chunk::new("a", 1, "three")], &StubEmbedder::new(32), &m);
        assert!(matches!(err, Err(CamError::DimensionMismatch { left: 16, right: 32 })));
    }
}
