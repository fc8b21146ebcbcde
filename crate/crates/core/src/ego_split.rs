//! Ego-centric node replication.
//!
//! Each node is split into one replica per connected component of its
//! ego-network (the subgraph induced by its neighbors, excluding the node
//! itself), and every original edge `(u, v)` becomes the replica edge joining
//! the replica of `u` whose component holds `v` to the replica of `v` whose
//! component holds `u`. Overlapping neighborhoods are thereby disentangled,
//! so a plain partition of the replicas yields overlapping node clusters.
//!
//! Replica identity is canonical (node plus smallest component member), so
//! the network is a pure function of the current graph and incremental
//! maintenance can be checked against a from-scratch build.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CamError, Result};
use crate::graph::LevelGraph;
use crate::ids::{ClusterLabel, NodeId, ReplicaId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replica {
    pub id: ReplicaId,
    /// Neighbors of the node that this replica stands for. Empty only for the
    /// single replica of an isolated node.
    pub component: BTreeSet<NodeId>,
}

/// Replicas of one level, their adjacency and their cluster labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplicaNetwork {
    pub level: u32,
    pub replicas: BTreeMap<NodeId, Vec<Replica>>,
    pub adjacency: BTreeMap<ReplicaId, BTreeSet<ReplicaId>>,
    pub labels: BTreeMap<ReplicaId, ClusterLabel>,
}

/// Canonical structure of a replica network, ignoring labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplicaStructure {
    pub replicas: Vec<(ReplicaId, Vec<NodeId>)>,
    pub edges: Vec<(ReplicaId, ReplicaId)>,
}

impl ReplicaNetwork {
    pub fn new(level: u32) -> Self {
        Self { level, ..Default::default() }
    }

    pub fn replica_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn replicas_of(&self, v: NodeId) -> &[Replica] {
        self.replicas.get(&v).map_or(&[], Vec::as_slice)
    }

    pub fn replica_ids(&self) -> impl Iterator<Item = ReplicaId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn neighbors(&self, r: ReplicaId) -> impl Iterator<Item = ReplicaId> + '_ {
        self.adjacency.get(&r).into_iter().flatten().copied()
    }

    pub fn label(&self, r: ReplicaId) -> Option<ClusterLabel> {
        self.labels.get(&r).copied()
    }

    /// Edges once each, as `(a, b)` with `a < b`.
    pub fn edges(&self) -> impl Iterator<Item = (ReplicaId, ReplicaId)> + '_ {
        self.adjacency.iter().flat_map(|(a, ns)| ns.range(*a..).filter(move |b| *b != a).map(move |b| (*a, *b)))
    }

    pub fn structure(&self) -> ReplicaStructure {
        ReplicaStructure {
            replicas: self
                .replicas
                .values()
                .flatten()
                .map(|r| (r.id, r.component.iter().copied().collect()))
                .collect(),
            edges: self.edges().collect(),
        }
    }

    fn link(&mut self, a: ReplicaId, b: ReplicaId) -> bool {
        let fresh = self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
        fresh
    }
}

/// Connected components of `v`'s ego-network, each sorted, in order of their
/// smallest member. Isolated nodes have none.
pub fn ego_components(v: NodeId, g: &LevelGraph) -> Vec<BTreeSet<NodeId>> {
    let Some(nbrs) = g.neighbor_map(v) else {
        return Vec::new();
    };
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    let mut out = Vec::new();
    for &start in nbrs.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            for (y, _) in g.neighbors(x) {
                if nbrs.contains_key(&y) && seen.insert(y) {
                    comp.insert(y);
                    stack.push(y);
                }
            }
        }
        out.push(comp);
    }
    out
}

fn replicas_for(v: NodeId, comps: Vec<BTreeSet<NodeId>>) -> Vec<Replica> {
    if comps.is_empty() {
        return vec![Replica { id: ReplicaId::isolated(v), component: BTreeSet::new() }];
    }
    comps
        .into_iter()
        .map(|c| Replica { id: ReplicaId::new(v, c.first().copied()), component: c })
        .collect()
}

/// The replica edge an original edge `(u, v)` maps to.
pub fn map_edge(u: NodeId, v: NodeId, rn: &ReplicaNetwork) -> Result<(ReplicaId, ReplicaId)> {
    let side = |x: NodeId, other: NodeId| {
        rn.replicas_of(x)
            .iter()
            .find(|r| r.component.contains(&other))
            .map(|r| r.id)
            .ok_or(CamError::StaleReplica(x, other))
    };
    Ok((side(u, v)?, side(v, u)?))
}

/// What a call to [`rebuild_replicas`] changed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplicaDelta {
    /// Nodes whose ego components were recomputed, ascending.
    pub recomputed: Vec<NodeId>,
    /// Replicas that did not exist before.
    pub added: Vec<ReplicaId>,
    /// Added replicas that took over a label from a predecessor replica.
    pub inherited: Vec<(ReplicaId, ClusterLabel)>,
    /// Replicas that no longer exist, with the label they held.
    pub removed: Vec<(ReplicaId, Option<ClusterLabel>)>,
    pub edges_added: Vec<(ReplicaId, ReplicaId)>,
    pub edges_removed: Vec<(ReplicaId, ReplicaId)>,
}

impl ReplicaDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.edges_added.is_empty() && self.edges_removed.is_empty()
    }

    /// Surviving replicas whose neighborhood changed, plus every added replica.
    pub fn touched_replicas(&self, rn: &ReplicaNetwork) -> BTreeSet<ReplicaId> {
        self.added
            .iter()
            .copied()
            .chain(self.edges_added.iter().chain(&self.edges_removed).flat_map(|&(a, b)| [a, b]))
            .filter(|r| rn.adjacency.contains_key(r))
            .collect()
    }
}

/// Recomputes the replicas of every node in `affected` and rebuilds the
/// replica edges incident to them. Nodes absent from `g` lose their
/// replicas. Replicas of other nodes are left alone.
///
/// Labels carry over: a replica whose id survives keeps its label, and a new
/// replica inherits from the overlapping predecessor with the smallest
/// anchor (an isolated predecessor counts as overlapping everything).
/// Replicas without a predecessor are left unlabeled.
pub fn rebuild_replicas(affected: &BTreeSet<NodeId>, g: &LevelGraph, rn: &mut ReplicaNetwork) -> Result<ReplicaDelta> {
    let order: Vec<NodeId> = affected.iter().copied().collect();
    let plans: Vec<Option<Vec<Replica>>> = order
        .par_iter()
        .map(|&v| g.contains(v).then(|| replicas_for(v, ego_components(v, g))))
        .collect();

    let mut delta = ReplicaDelta {
        recomputed: order.iter().copied().filter(|v| g.contains(*v)).collect(),
        ..Default::default()
    };
    let mut removed_edges: BTreeSet<(ReplicaId, ReplicaId)> = BTreeSet::new();

    for (&v, plan) in order.iter().zip(plans) {
        let old = rn.replicas.remove(&v).unwrap_or_default();
        for r in &old {
            if let Some(ns) = rn.adjacency.remove(&r.id) {
                for n in ns {
                    if let Some(back) = rn.adjacency.get_mut(&n) {
                        back.remove(&r.id);
                    }
                    removed_edges.insert((r.id.min(n), r.id.max(n)));
                }
            }
        }
        let new = plan.unwrap_or_default();
        let new_ids: BTreeSet<ReplicaId> = new.iter().map(|r| r.id).collect();
        let old_labels: BTreeMap<ReplicaId, Option<ClusterLabel>> =
            old.iter().map(|r| (r.id, rn.labels.remove(&r.id))).collect();

        for r in &new {
            rn.adjacency.entry(r.id).or_default();
            if let Some(label) = old_labels.get(&r.id) {
                if let Some(l) = label {
                    rn.labels.insert(r.id, *l);
                }
                continue;
            }
            delta.added.push(r.id);
            let donor = old
                .iter()
                .filter(|o| o.component.is_empty() || !o.component.is_disjoint(&r.component) || r.component.is_empty())
                .map(|o| o.id)
                .min();
            if let Some(l) = donor.and_then(|d| old_labels.get(&d).copied().flatten()) {
                rn.labels.insert(r.id, l);
                delta.inherited.push((r.id, l));
            }
        }
        for (id, label) in old_labels {
            if !new_ids.contains(&id) {
                delta.removed.push((id, label));
            }
        }
        if !new.is_empty() {
            rn.replicas.insert(v, new);
        }
    }

    let mut added_edges: BTreeSet<(ReplicaId, ReplicaId)> = BTreeSet::new();
    for &v in &order {
        for (u, _) in g.neighbors(v) {
            let (a, b) = map_edge(v, u, rn)?;
            rn.link(a, b);
            added_edges.insert((a.min(b), a.max(b)));
        }
    }
    delta.edges_added = added_edges.difference(&removed_edges).copied().collect();
    delta.edges_removed = removed_edges.difference(&added_edges).copied().collect();
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(i: u64) -> NodeId {
        NodeId::chunk(i)
    }

    fn graph(edges: &[(u64, u64)], nodes: u64) -> LevelGraph {
        let mut g = LevelGraph::new(0);
        for i in 0..nodes {
            g.add_node(n(i));
        }
        for &(a, b) in edges {
            g.upsert_edge(n(a), n(b), 1.0);
        }
        g
    }

    /// Butterfly: two triangles {0,1,2} and {2,3,4} sharing node 2.
    fn butterfly() -> LevelGraph {
        graph(&[(0, 1), (0, 2), (1, 2), (2, 3), (2, 4), (3, 4)], 5)
    }

    fn build(g: &LevelGraph) -> ReplicaNetwork {
        let mut rn = ReplicaNetwork::new(g.level);
        rebuild_replicas(&g.nodes().collect(), g, &mut rn).unwrap();
        rn
    }

    #[test]
    fn ego_component_examples() {
        let path = graph(&[(0, 1), (1, 2)], 3);
        assert_eq!(ego_components(n(1), &path), vec![BTreeSet::from([n(0)]), BTreeSet::from([n(2)])]);
        let tri = graph(&[(0, 1), (1, 2), (0, 2)], 3);
        assert_eq!(ego_components(n(0), &tri), vec![BTreeSet::from([n(1), n(2)])]);
        let lone = graph(&[], 1);
        assert!(ego_components(n(0), &lone).is_empty());
    }

    #[test]
    fn butterfly_center_splits_in_two() {
        let rn = build(&butterfly());
        assert_eq!(rn.replicas_of(n(2)).len(), 2);
        for i in [0, 1, 3, 4] {
            assert_eq!(rn.replicas_of(n(i)).len(), 1);
        }
        assert_eq!(rn.edge_count(), 6);
        let (a, v) = map_edge(n(0), n(2), &rn).unwrap();
        assert_eq!(a, ReplicaId::new(n(0), Some(n(1))));
        assert_eq!(v, ReplicaId::new(n(2), Some(n(0))));
    }

    #[test]
    fn path_edge_attaches_to_matching_replica() {
        let g = graph(&[(0, 1), (1, 2)], 3);
        let rn = build(&g);
        assert_eq!(map_edge(n(0), n(1), &rn).unwrap().1, ReplicaId::new(n(1), Some(n(0))));
        assert_eq!(map_edge(n(2), n(1), &rn).unwrap().1, ReplicaId::new(n(1), Some(n(2))));
    }

    #[test]
    fn closing_a_triangle_merges_replicas_and_keeps_smallest_label() {
        let mut g = graph(&[(0, 1), (1, 2)], 3);
        let mut rn = build(&g);
        let keep = ReplicaId::new(n(1), Some(n(0)));
        let gone = ReplicaId::new(n(1), Some(n(2)));
        rn.labels.insert(keep, ClusterLabel(7));
        rn.labels.insert(gone, ClusterLabel(3));
        g.upsert_edge(n(0), n(2), 1.0);
        let delta = rebuild_replicas(&BTreeSet::from([n(0), n(1), n(2)]), &g, &mut rn).unwrap();
        assert_eq!(rn.replicas_of(n(1)).len(), 1);
        assert_eq!(rn.label(keep), Some(ClusterLabel(7)));
        assert!(delta.removed.contains(&(gone, Some(ClusterLabel(3)))));
        assert_eq!(rn.structure(), build(&g).structure());
    }

    #[test]
    fn split_fragments_inherit_the_old_label() {
        let mut g = graph(&[(0, 1), (1, 2), (0, 2)], 3);
        let mut rn = build(&g);
        let center = ReplicaId::new(n(1), Some(n(0)));
        rn.labels.insert(center, ClusterLabel(4));
        g.remove_edge(n(0), n(2));
        let delta = rebuild_replicas(&BTreeSet::from([n(0), n(1), n(2)]), &g, &mut rn).unwrap();
        let fresh = ReplicaId::new(n(1), Some(n(2)));
        assert_eq!(delta.inherited, vec![(fresh, ClusterLabel(4))]);
        assert_eq!(rn.label(center), Some(ClusterLabel(4)));
        assert_eq!(rn.label(fresh), Some(ClusterLabel(4)));
    }

    #[test]
    fn empty_affected_set_is_a_no_op() {
        let g = butterfly();
        let mut rn = build(&g);
        let before = rn.clone();
        let delta = rebuild_replicas(&BTreeSet::new(), &g, &mut rn).unwrap();
        assert!(delta.is_empty() && delta.recomputed.is_empty());
        assert_eq!(rn, before);
    }

    #[test]
    fn isolated_node_gets_one_replica_and_removed_node_none() {
        let mut g = graph(&[(0, 1)], 3);
        let mut rn = build(&g);
        assert_eq!(rn.replicas_of(n(2)), &[Replica { id: ReplicaId::isolated(n(2)), component: BTreeSet::new() }]);
        g.remove_node(n(1));
        rebuild_replicas(&BTreeSet::from([n(0), n(1)]), &g, &mut rn).unwrap();
        assert!(rn.replicas_of(n(1)).is_empty());
        assert_eq!(rn.replicas_of(n(0))[0].id, ReplicaId::isolated(n(0)));
        assert_eq!(rn.edge_count(), 0);
    }

    #[test]
    fn stale_replica_set_is_reported() {
        let mut g = graph(&[(0, 1)], 3);
        let rn = build(&g);
        g.upsert_edge(n(1), n(2), 1.0);
        assert!(matches!(map_edge(n(1), n(2), &rn), Err(CamError::StaleReplica(_, _))));
    }
}
