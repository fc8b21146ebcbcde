//! Incremental label propagation over a replica network.
//!
//! New replicas start with fresh singleton labels while existing replicas
//! keep theirs. Propagation only visits an active set seeded with the
//! replicas whose neighborhood changed; whenever a replica changes label its
//! neighbors join the active set.
//!
//! Vote rule: a replica takes the most frequent label among its neighbors
//! (unweighted). It keeps its current label whenever that label ties for the
//! maximum, otherwise the smallest tied label wins. Rounds are synchronous:
//! all votes of a round read the labels committed by the previous round.
//! Synchronous voting can oscillate (two neighbors swapping labels forever),
//! so if `max_iters` rounds pass without convergence, propagation finishes
//! with in-order sweeps that commit each vote immediately. A sweep change
//! always strictly increases the number of same-label edges, which bounds
//! the sweeps and leaves every replica at a fixpoint of the vote rule.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Bound;

use rayon::prelude::*;
use serde::Serialize;

use crate::ego_split::{ReplicaDelta, ReplicaNetwork};
use crate::ids::{ClusterLabel, NodeId, ReplicaId};

/// Cluster membership of one level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterRegistry {
    pub level: u32,
    pub members: BTreeMap<ClusterLabel, BTreeSet<ReplicaId>>,
    /// Clusters touched since the last [`finalize`].
    pub dirty: BTreeSet<ClusterLabel>,
    /// Labels minted since the last [`finalize`].
    pub born: BTreeSet<ClusterLabel>,
    pub next_label: u64,
}

impl ClusterRegistry {
    pub fn new(level: u32) -> Self {
        Self { level, ..Default::default() }
    }

    pub fn cluster_count(&self) -> usize {
        self.members.len()
    }

    pub fn mint(&mut self) -> ClusterLabel {
        let l = ClusterLabel(self.next_label);
        self.next_label += 1;
        self.born.insert(l);
        self.dirty.insert(l);
        l
    }

    fn attach(&mut self, r: ReplicaId, l: ClusterLabel) {
        self.members.entry(l).or_default().insert(r);
        self.dirty.insert(l);
    }

    fn detach(&mut self, r: ReplicaId, l: ClusterLabel) {
        if let Some(m) = self.members.get_mut(&l) {
            m.remove(&r);
        }
        self.dirty.insert(l);
    }

    /// Mirrors a replica rebuild: removed replicas leave their clusters,
    /// inheriting replicas join theirs, and the clusters of every replica
    /// whose neighborhood changed are marked dirty.
    pub fn absorb(&mut self, delta: &ReplicaDelta, rn: &ReplicaNetwork) {
        for (r, l) in &delta.removed {
            if let Some(l) = l {
                self.detach(*r, *l);
            }
        }
        for (r, l) in &delta.inherited {
            self.attach(*r, *l);
        }
        for r in delta.touched_replicas(rn) {
            if let Some(l) = rn.label(r) {
                self.dirty.insert(l);
            }
        }
    }

    /// Marks the clusters holding any replica of `nodes` dirty.
    pub fn mark_nodes_dirty(&mut self, nodes: impl IntoIterator<Item = NodeId>, rn: &ReplicaNetwork) {
        for v in nodes {
            for r in rn.replicas_of(v) {
                if let Some(l) = rn.label(r.id) {
                    self.dirty.insert(l);
                }
            }
        }
    }
}

/// Gives every unlabeled replica in `new_replicas` a fresh singleton label,
/// in ascending replica order. Labeled replicas are left alone.
pub fn init_labels(new_replicas: &BTreeSet<ReplicaId>, rn: &mut ReplicaNetwork, registry: &mut ClusterRegistry) -> usize {
    let mut minted = 0;
    for &r in new_replicas {
        if rn.adjacency.contains_key(&r) && !rn.labels.contains_key(&r) {
            let l = registry.mint();
            rn.labels.insert(r, l);
            registry.attach(r, l);
            minted += 1;
        }
    }
    minted
}

/// Winning label for `r` under the vote rule, or `None` if it has no
/// neighbors or no labeled neighbors.
pub fn vote(r: ReplicaId, rn: &ReplicaNetwork) -> Option<ClusterLabel> {
    let current = rn.label(r);
    let mut counts: BTreeMap<ClusterLabel, usize> = BTreeMap::new();
    for n in rn.neighbors(r) {
        if let Some(l) = rn.label(n) {
            *counts.entry(l).or_default() += 1;
        }
    }
    let best = *counts.values().max()?;
    if let Some(c) = current {
        if counts.get(&c) == Some(&best) {
            return Some(c);
        }
    }
    counts.into_iter().find(|(_, c)| *c == best).map(|(l, _)| l)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Propagation {
    /// Labels whose member set changed.
    pub modified: BTreeSet<ClusterLabel>,
    pub sync_rounds: usize,
    pub sweeps: usize,
    pub label_changes: usize,
    /// Final active set: the seed plus the ripple it triggered.
    #[serde(skip)]
    pub active: BTreeSet<ReplicaId>,
    /// Replicas whose label was read, when requested.
    #[serde(skip)]
    pub reads: Option<BTreeSet<ReplicaId>>,
}

pub fn propagate(
    seed: &BTreeSet<ReplicaId>,
    rn: &mut ReplicaNetwork,
    registry: &mut ClusterRegistry,
    max_iters: usize,
) -> Propagation {
    run_propagation(seed, rn, registry, max_iters, false)
}

/// [`propagate`], also recording every replica whose label was read.
pub fn propagate_traced(
    seed: &BTreeSet<ReplicaId>,
    rn: &mut ReplicaNetwork,
    registry: &mut ClusterRegistry,
    max_iters: usize,
) -> Propagation {
    run_propagation(seed, rn, registry, max_iters, true)
}

fn run_propagation(
    seed: &BTreeSet<ReplicaId>,
    rn: &mut ReplicaNetwork,
    registry: &mut ClusterRegistry,
    max_iters: usize,
    trace: bool,
) -> Propagation {
    let mut out = Propagation {
        active: seed.iter().copied().filter(|r| rn.adjacency.contains_key(r)).collect(),
        reads: trace.then(BTreeSet::new),
        ..Default::default()
    };

    let mut converged = false;
    while out.sync_rounds < max_iters {
        out.sync_rounds += 1;
        if let Some(reads) = out.reads.as_mut() {
            for &r in &out.active {
                reads.insert(r);
                reads.extend(rn.neighbors(r));
            }
        }
        let net: &ReplicaNetwork = rn;
        let changes: Vec<(ReplicaId, ClusterLabel)> = out
            .active
            .par_iter()
            .filter_map(|&r| vote(r, net).filter(|l| Some(*l) != net.label(r)).map(|l| (r, l)))
            .collect();
        if changes.is_empty() {
            converged = true;
            break;
        }
        for (r, l) in changes {
            commit(r, l, rn, registry, &mut out);
        }
    }

    if !converged {
        loop {
            out.sweeps += 1;
            let mut changed = false;
            let mut cursor = out.active.iter().next().copied();
            while let Some(r) = cursor {
                if let Some(reads) = out.reads.as_mut() {
                    reads.insert(r);
                    reads.extend(rn.neighbors(r));
                }
                if let Some(l) = vote(r, rn).filter(|l| Some(*l) != rn.label(r)) {
                    commit(r, l, rn, registry, &mut out);
                    changed = true;
                }
                cursor = out.active.range((Bound::Excluded(r), Bound::Unbounded)).next().copied();
            }
            if !changed {
                break;
            }
        }
    }
    registry.dirty.extend(out.modified.iter().copied());
    out
}

fn commit(r: ReplicaId, l: ClusterLabel, rn: &mut ReplicaNetwork, registry: &mut ClusterRegistry, out: &mut Propagation) {
    if let Some(old) = rn.labels.insert(r, l) {
        registry.detach(r, old);
        out.modified.insert(old);
    }
    registry.attach(r, l);
    out.modified.insert(l);
    out.label_changes += 1;
    let nbrs: Vec<ReplicaId> = rn.neighbors(r).collect();
    out.active.extend(nbrs);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeKind {
    Created,
    Updated,
    Dissolved,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterChange {
    pub label: ClusterLabel,
    /// Nodes the cluster's replicas belong to (empty when dissolved).
    pub members: BTreeSet<NodeId>,
    pub kind: ChangeKind,
}

/// Connected components of a replica subset, each sorted, ordered by their
/// smallest replica.
fn components_within(members: &BTreeSet<ReplicaId>, rn: &ReplicaNetwork) -> Vec<BTreeSet<ReplicaId>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &start in members {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            for y in rn.neighbors(x) {
                if members.contains(&y) && seen.insert(y) {
                    comp.insert(y);
                    stack.push(y);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Reports the clusters in `modified`, after splitting any disconnected
/// cluster into its connected components (the component holding the
/// smallest replica keeps the label, the others get fresh labels). Resets
/// the registry's dirty and born sets.
pub fn finalize(modified: &BTreeSet<ClusterLabel>, rn: &mut ReplicaNetwork, registry: &mut ClusterRegistry) -> Vec<ClusterChange> {
    let mut changes = Vec::new();
    let project = |reps: &BTreeSet<ReplicaId>| reps.iter().map(|r| r.node).collect::<BTreeSet<NodeId>>();
    for &label in modified {
        let members = registry.members.remove(&label).unwrap_or_default();
        if members.is_empty() {
            if !registry.born.contains(&label) {
                changes.push(ClusterChange { label, members: BTreeSet::new(), kind: ChangeKind::Dissolved });
            }
            continue;
        }
        let mut comps = components_within(&members, rn).into_iter();
        let main = comps.next().expect("non-empty cluster has a component");
        for extra in comps {
            let fresh = registry.mint();
            for &r in &extra {
                rn.labels.insert(r, fresh);
            }
            changes.push(ClusterChange { label: fresh, members: project(&extra), kind: ChangeKind::Created });
            registry.members.insert(fresh, extra);
        }
        let kind = if registry.born.contains(&label) { ChangeKind::Created } else { ChangeKind::Updated };
        changes.push(ClusterChange { label, members: project(&main), kind });
        registry.members.insert(label, main);
    }
    changes.sort_by_key(|c| c.label);
    registry.dirty.clear();
    registry.born.clear();
    changes
}
