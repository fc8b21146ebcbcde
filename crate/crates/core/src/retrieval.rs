//! Query answering over a committed hierarchy.
//!
//! Retrieval first picks the `s` nodes most similar to the query across all
//! levels, lets the selector keep the relevant ones, and then grows the
//! activated set along same-level edges and down into cluster members until
//! nothing new is activated or the hop budget is spent.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::config::EngineConfig;
use crate::corpus::approx_tokens;
use crate::embedding::{cosine, Embedding};
use crate::error::{CamError, ProviderError, Result};
use crate::hierarchy::MemoryHierarchy;
use crate::ids::NodeId;
use crate::providers::{Embedder, LanguageModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrievalParams {
    pub s: usize,
    pub max_hops: usize,
    pub context_budget: usize,
}

impl From<&EngineConfig> for RetrievalParams {
    fn from(c: &EngineConfig) -> Self {
        Self { s: c.s, max_hops: c.max_hops, context_budget: c.context_budget }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateRound {
    pub offered: Vec<NodeId>,
    pub activated: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RetrievalTrace {
    pub query: String,
    pub candidate_rounds: Vec<CandidateRound>,
    /// Activated nodes in activation order.
    pub final_activation: Vec<NodeId>,
    pub context_blocks: Vec<String>,
    pub hops_used: usize,
}

impl RetrievalTrace {
    pub fn activated(&self) -> BTreeSet<NodeId> {
        self.final_activation.iter().copied().collect()
    }
}

/// Exact top-`s` nodes by cosine to `query`, ties by ascending id.
pub fn localize_embedding(query: &Embedding, h: &MemoryHierarchy, s: usize) -> Result<Vec<NodeId>> {
    if h.is_empty() {
        return Err(CamError::EmptyMemory);
    }
    if let Some(dim) = h.embedding_dim().filter(|d| *d != query.dim()) {
        return Err(CamError::DimensionMismatch { left: dim, right: query.dim() });
    }
    let mut scored: Vec<(f64, NodeId)> = h.all_nodes().map(|n| (cosine(query, &n.embedding), n.id)).collect();
    let by_rank = |a: &(f64, NodeId), b: &(f64, NodeId)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if s < scored.len() {
        scored.select_nth_unstable_by(s, by_rank);
        scored.truncate(s);
    }
    scored.sort_by(by_rank);
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

pub fn embed_query(query: &str, embedder: &dyn Embedder) -> Result<Embedding> {
    let mut v = embedder.embed_batch(&[query.to_string()])?;
    if v.len() != 1 {
        return Err(ProviderError::Protocol(format!("expected 1 query embedding, got {}", v.len())).into());
    }
    Ok(v.pop().unwrap())
}

pub fn localize(query: &str, h: &MemoryHierarchy, embedder: &dyn Embedder, s: usize) -> Result<Vec<NodeId>> {
    if h.is_empty() {
        return Err(CamError::EmptyMemory);
    }
    localize_embedding(&embed_query(query, embedder)?, h, s)
}

fn offer(query: &str, ids: &[NodeId], h: &MemoryHierarchy, llm: &dyn LanguageModel) -> Result<Vec<NodeId>> {
    let candidates: Vec<(NodeId, String)> = ids.iter().map(|id| (*id, h.node(*id).unwrap().text.clone())).collect();
    let picked = llm.select_relevant(query, &candidates)?;
    Ok(ids.iter().copied().filter(|id| picked.contains(id)).collect())
}

/// Same-level neighbors plus, for abstractions, their members one level down.
fn surroundings(id: NodeId, h: &MemoryHierarchy) -> impl Iterator<Item = NodeId> + '_ {
    let lvl = h.level(id.level).unwrap();
    let children = h.node(id).and_then(|n| n.members()).into_iter().flatten().copied();
    lvl.graph.neighbors(id).map(|(n, _)| n).chain(children)
}

pub fn explore(
    query: &str,
    localized: &[NodeId],
    h: &MemoryHierarchy,
    llm: &dyn LanguageModel,
    max_hops: usize,
) -> Result<RetrievalTrace> {
    let mut offered: BTreeSet<NodeId> = localized.iter().copied().collect();
    let first = offer(query, localized, h, llm)?;
    let mut activation = first.clone();
    let mut active: BTreeSet<NodeId> = first.iter().copied().collect();
    let mut rounds = vec![CandidateRound { offered: localized.to_vec(), activated: first }];
    let mut hops = 0;
    while hops < max_hops && !active.is_empty() {
        let frontier: BTreeSet<NodeId> =
            active.iter().flat_map(|v| surroundings(*v, h)).filter(|n| !offered.contains(n)).collect();
        if frontier.is_empty() {
            break;
        }
        let frontier: Vec<NodeId> = frontier.into_iter().collect();
        offered.extend(frontier.iter().copied());
        let newly = offer(query, &frontier, h, llm)?;
        hops += 1;
        let grew = !newly.is_empty();
        active.extend(newly.iter().copied());
        activation.extend(newly.iter().copied());
        rounds.push(CandidateRound { offered: frontier, activated: newly });
        if !grew {
            break;
        }
    }
    Ok(RetrievalTrace {
        query: query.to_string(),
        candidate_rounds: rounds,
        final_activation: activation,
        context_blocks: Vec::new(),
        hops_used: hops,
    })
}

/// Orders activated nodes coarse to fine, then by document position, and
/// keeps the longest prefix that fits `budget` approximate tokens.
pub fn assemble_context(activated: &[NodeId], h: &MemoryHierarchy, budget: usize) -> Vec<String> {
    let mut nodes: Vec<_> = activated.iter().filter_map(|id| h.node(*id)).collect();
    nodes.sort_by(|a, b| {
        b.id.level
            .cmp(&a.id.level)
            .then_with(|| a.doc_id().cmp(&b.doc_id()))
            .then_with(|| a.seq_index().cmp(&b.seq_index()))
            .then_with(|| a.id.cmp(&b.id))
    });
    let mut used = 0;
    let mut blocks = Vec::new();
    for n in nodes {
        let cost = approx_tokens(&n.text);
        if used + cost > budget {
            break;
        }
        used += cost;
        blocks.push(n.text.clone());
    }
    blocks
}

pub fn respond(
    query: &str,
    h: &MemoryHierarchy,
    embedder: &dyn Embedder,
    llm: &dyn LanguageModel,
    params: RetrievalParams,
) -> Result<(String, RetrievalTrace)> {
    let localized = localize(query, h, embedder, params.s)?;
    let mut trace = explore(query, &localized, h, llm, params.max_hops)?;
    trace.context_blocks = assemble_context(&trace.final_activation, h, params.context_budget);
    let answer = llm.answer(query, &trace.context_blocks)?;
    Ok((answer, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::MemoryHierarchy;
    use crate::providers::{StubEmbedder, StubLanguageModel};
    use crate::synthetic;

    fn topic_memory() -> MemoryHierarchy {
        let mut h = MemoryHierarchy::new(EngineConfig::default()).unwrap();
        let chunks = synthetic::topic_blocks(4, 50, 11);
        h.integrate_batch(&chunks, &StubEmbedder::default(), &StubLanguageModel::default()).unwrap();
        h
    }

    fn params() -> RetrievalParams {
        RetrievalParams::from(&EngineConfig::default())
    }

    #[test]
    fn empty_memory_is_an_error() {
        let h = MemoryHierarchy::new(EngineConfig::default()).unwrap();
        let err = localize("alpha", &h, &StubEmbedder::default(), 5);
        assert!(matches!(err, Err(CamError::EmptyMemory)));
    }

    #[test]
    fn large_s_returns_every_node() {
        let h = topic_memory();
        let d = localize("alpha", &h, &StubEmbedder::default(), 10_000).unwrap();
        assert_eq!(d.len(), h.node_count());
    }

    #[test]
    fn zero_query_falls_back_to_id_order() {
        let h = topic_memory();
        let d = localize_embedding(&Embedding::zeros(256), &h, 5).unwrap();
        assert_eq!(d, (0..5).map(NodeId::chunk).collect::<Vec<_>>());
    }

    #[test]
    fn nothing_selected_means_no_context() {
        let h = topic_memory();
        let picky = StubLanguageModel::new(StubEmbedder::default(), 1.5);
        let (answer, trace) = respond("alpha", &h, &StubEmbedder::default(), &picky, params()).unwrap();
        assert!(trace.final_activation.is_empty());
        assert_eq!(trace.hops_used, 0);
        assert_eq!(answer, crate::providers::NO_CONTEXT);
    }

    #[test]
    fn topic_query_reaches_chunks_of_its_topic() {
        let h = topic_memory();
        let llm = StubLanguageModel::default();
        let (answer, trace) = respond("alpha", &h, &StubEmbedder::default(), &llm, params()).unwrap();
        let chunks: Vec<_> = trace.final_activation.iter().filter(|id| id.level == 0).collect();
        assert!(!chunks.is_empty());
        for id in &chunks {
            assert_eq!(h.node(**id).unwrap().doc_id(), Some("alpha"));
        }
        assert!(h.level(0).unwrap().nodes.values().any(|n| n.doc_id() == Some("alpha") && answer.contains(&n.text)));
    }

    #[test]
    fn an_activated_abstraction_opens_its_children() {
        let h = topic_memory();
        let l1 = h.level(1).unwrap();
        let (id, node) = l1.nodes.iter().find(|(_, n)| n.text.contains("alpha")).unwrap();
        let llm = StubLanguageModel::default();
        let trace = explore("alpha", &[*id], &h, &llm, 1).unwrap();
        assert_eq!(trace.candidate_rounds[0].activated, vec![*id]);
        let children = node.members().unwrap();
        assert!(trace.candidate_rounds[1].activated.iter().any(|c| children.contains(c)));
    }

    #[test]
    fn hop_cap_and_offer_dedup() {
        let h = topic_memory();
        let greedy = StubLanguageModel::new(StubEmbedder::default(), -1.0);
        for hops in [0, 1, 3] {
            let d = localize("alpha", &h, &StubEmbedder::default(), 5).unwrap();
            let trace = explore("alpha", &d, &h, &greedy, hops).unwrap();
            assert!(trace.hops_used <= hops);
            if hops <= 1 {
                assert_eq!(trace.hops_used, hops);
            }
            let offered: Vec<NodeId> = trace.candidate_rounds.iter().flat_map(|r| r.offered.clone()).collect();
            let unique: BTreeSet<NodeId> = offered.iter().copied().collect();
            assert_eq!(offered.len(), unique.len());
            assert!(trace.activated().is_subset(&unique));
        }
    }

    #[test]
    fn context_is_ordered_and_cut_between_blocks() {
        let h = topic_memory();
        let l1 = *h.level(1).unwrap().nodes.keys().next().unwrap();
        let ids = vec![NodeId::chunk(3), NodeId::chunk(1), l1];
        let all = assemble_context(&ids, &h, usize::MAX);
        assert_eq!(all[0], h.node(l1).unwrap().text);
        assert_eq!(all[1], h.node(NodeId::chunk(1)).unwrap().text);
        let head = approx_tokens(&all[0]) + approx_tokens(&all[1]);
        assert_eq!(assemble_context(&ids, &h, head + 1), all[..2].to_vec());
        assert!(assemble_context(&ids, &h, 0).is_empty());
    }
}
