//! Full structural audit of a hierarchy. Everything that incremental updates
//! maintain is recomputed from the level graphs and compared.

use std::collections::{BTreeMap, BTreeSet};

use crate::ego_split::{self, ReplicaNetwork};
use crate::error::IntegrityError;
use crate::graph::NodeKind;
use crate::hierarchy::{abstraction_id, should_grow, Level, MemoryHierarchy};
use crate::ids::{ClusterLabel, NodeId, ReplicaId};

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(IntegrityError(format!($($fmt)+)));
        }
    };
}

impl MemoryHierarchy {
    pub fn check_consistency(&self) -> Result<(), IntegrityError> {
        let levels = self.levels();
        ensure!(!levels.is_empty(), "hierarchy has no level 0");
        let min = self.config().min_level_size;
        for (i, lvl) in levels.iter().enumerate() {
            ensure!(lvl.index() as usize == i, "level {i} is tagged as level {}", lvl.index());
            check_level(lvl)?;
            let grows = should_grow(lvl.registry.cluster_count(), lvl.graph.node_count(), min);
            match levels.get(i + 1) {
                Some(up) => {
                    ensure!(grows, "level {i} has a parent level but is too small to need one");
                    check_parent(lvl, up)?;
                }
                None => ensure!(!grows, "top level {i} should have a parent level"),
            }
        }
        Ok(())
    }
}

fn check_level(lvl: &Level) -> Result<(), IntegrityError> {
    let l = lvl.index();
    let graph_nodes: BTreeSet<NodeId> = lvl.graph.nodes().collect();
    let stored: BTreeSet<NodeId> = lvl.nodes.keys().copied().collect();
    ensure!(graph_nodes == stored, "level {l}: graph and node table disagree");
    for (id, node) in &lvl.nodes {
        ensure!(node.id == *id && id.level == l, "level {l}: node {id} is misfiled");
        let is_chunk = matches!(node.kind, NodeKind::Chunk { .. });
        ensure!(is_chunk == (l == 0), "level {l}: node {id} has the wrong kind");
    }
    let mut half_edges = 0;
    for u in lvl.graph.nodes() {
        for (v, w) in lvl.graph.neighbors(u) {
            ensure!(u != v, "level {l}: self-loop at {u}");
            ensure!((0.0..=1.0).contains(&w), "level {l}: edge {u}-{v} has weight {w}");
            ensure!(lvl.graph.weight(v, u) == Some(w), "level {l}: edge {u}-{v} is not symmetric");
            half_edges += 1;
        }
    }
    ensure!(half_edges == 2 * lvl.graph.edge_count(), "level {l}: edge count is stale");

    let mut fresh = ReplicaNetwork::new(l);
    ego_split::rebuild_replicas(&graph_nodes, &lvl.graph, &mut fresh)
        .map_err(|e| IntegrityError(format!("level {l}: replica rebuild failed: {e}")))?;
    ensure!(
        fresh.structure() == lvl.replicas.structure(),
        "level {l}: replica network differs from a rebuild"
    );

    let rn = &lvl.replicas;
    let mut by_label: BTreeMap<ClusterLabel, BTreeSet<ReplicaId>> = BTreeMap::new();
    for r in rn.replica_ids() {
        let label = rn.label(r).ok_or_else(|| IntegrityError(format!("level {l}: replica {r} is unlabeled")))?;
        ensure!(label.0 < lvl.registry.next_label, "level {l}: label {label} was never minted");
        by_label.entry(label).or_default().insert(r);
    }
    ensure!(rn.labels.len() == rn.replica_count(), "level {l}: labels on unknown replicas");
    ensure!(by_label == lvl.registry.members, "level {l}: cluster registry is stale");
    ensure!(lvl.registry.dirty.is_empty() && lvl.registry.born.is_empty(), "level {l}: unfinished batch state");
    for (label, members) in &by_label {
        ensure!(is_connected(members, rn), "level {l}: cluster {label} is disconnected");
    }
    Ok(())
}

fn is_connected(members: &BTreeSet<ReplicaId>, rn: &ReplicaNetwork) -> bool {
    let Some(&start) = members.first() else { return true };
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(r) = stack.pop() {
        for n in rn.neighbors(r) {
            if members.contains(&n) && seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == members.len()
}

fn check_parent(lvl: &Level, up: &Level) -> Result<(), IntegrityError> {
    let l = lvl.index();
    let rn = &lvl.replicas;
    let expected: BTreeSet<NodeId> = lvl.registry.members.keys().map(|c| abstraction_id(l, *c)).collect();
    let actual: BTreeSet<NodeId> = up.nodes.keys().copied().collect();
    ensure!(expected == actual, "level {}: abstractions do not match the clusters below", l + 1);

    for (label, reps) in &lvl.registry.members {
        let id = abstraction_id(l, *label);
        let node = &up.nodes[&id];
        let projected: BTreeSet<NodeId> = reps.iter().map(|r| r.node).collect();
        ensure!(node.members() == Some(&projected), "abstraction {id} lists the wrong members");
        if projected.len() == 1 {
            let only = &lvl.nodes[projected.first().unwrap()];
            ensure!(node.text == only.text, "singleton abstraction {id} does not carry its member's text");
        }
    }

    let mut wanted: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    for (a, b) in rn.edges() {
        let (la, lb) = (rn.label(a).unwrap(), rn.label(b).unwrap());
        if la == lb {
            continue;
        }
        let (x, y) = (abstraction_id(l, la), abstraction_id(l, lb));
        let w = lvl.graph.weight(a.node, b.node).unwrap_or(0.0);
        let slot = wanted.entry((x.min(y), x.max(y))).or_insert(w);
        *slot = slot.max(w);
    }
    let actual: BTreeMap<(NodeId, NodeId), f64> = up.graph.edges().map(|(u, v, w)| ((u, v), w)).collect();
    ensure!(wanted == actual, "level {}: edges do not match the inter-cluster replica edges", l + 1);
    Ok(())
}
