//! Brute-force reference implementations for tests. Nothing here calls into
//! the engine modules; only the shared data types are reused, so agreement
//! between an oracle and the engine is independent evidence.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::ego_split::{Replica, ReplicaNetwork, ReplicaStructure};
use crate::graph::LevelGraph;
use crate::ids::{ClusterLabel, NodeId, ReplicaId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleReport {
    pub case_id: String,
    pub engine_output_digest: String,
    pub oracle_output_digest: String,
    pub equal: bool,
}

impl OracleReport {
    pub fn compare<T: Serialize>(case_id: impl Into<String>, engine: &T, oracle: &T) -> Self {
        let engine_output_digest = digest(engine);
        let oracle_output_digest = digest(oracle);
        Self {
            case_id: case_id.into(),
            equal: engine_output_digest == oracle_output_digest,
            engine_output_digest,
            oracle_output_digest,
        }
    }
}

/// SHA-256 of the JSON form of `value`.
pub fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("oracle outputs serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// Composite edge score computed straight from its definition.
pub fn reference_pair_score(
    a: &[f64],
    b: &[f64],
    same_doc: bool,
    i: u64,
    j: u64,
    alpha: f64,
    sigma: f64,
) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    let cos = if aa == 0.0 || bb == 0.0 { 0.0 } else { ab / (aa.sqrt() * bb.sqrt()) };
    let proximity = if same_doc {
        let d = i as f64 - j as f64;
        (-(d * d) / (2.0 * sigma * sigma)).exp()
    } else {
        0.0
    };
    alpha * cos.max(0.0) + (1.0 - alpha) * proximity
}

/// Replica network of a whole graph, built from scratch with union-find over
/// every ego network. Labels are left empty.
pub fn offline_ego_split(g: &LevelGraph) -> ReplicaNetwork {
    let nodes: Vec<NodeId> = g.nodes().collect();
    let index: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let adj: Vec<Vec<usize>> = nodes.iter().map(|v| g.neighbors(*v).map(|(u, _)| index[&u]).collect()).collect();

    let mut rn = ReplicaNetwork::new(g.level);
    // owner[v] maps each neighbor of v to the anchor of its component.
    let mut owner: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); nodes.len()];
    for v in 0..nodes.len() {
        let nbrs = &adj[v];
        let pos: BTreeMap<usize, usize> = nbrs.iter().enumerate().map(|(p, u)| (*u, p)).collect();
        let mut parent: Vec<usize> = (0..nbrs.len()).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let next = p[y];
                p[y] = r;
                y = next;
            }
            r
        }
        for (pa, a) in nbrs.iter().enumerate() {
            for b in &adj[*a] {
                if let Some(&pb) = pos.get(b) {
                    let (ra, rb) = (find(&mut parent, pa), find(&mut parent, pb));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
        let mut comps: BTreeMap<usize, BTreeSet<NodeId>> = BTreeMap::new();
        for (p, u) in nbrs.iter().enumerate() {
            comps.entry(find(&mut parent, p)).or_default().insert(nodes[*u]);
        }
        let mut replicas: Vec<Replica> = comps
            .into_values()
            .map(|c| Replica { id: ReplicaId { node: nodes[v], anchor: c.first().copied() }, component: c })
            .collect();
        if replicas.is_empty() {
            replicas.push(Replica { id: ReplicaId { node: nodes[v], anchor: None }, component: BTreeSet::new() });
        }
        replicas.sort_by_key(|r| r.id);
        for r in &replicas {
            rn.adjacency.insert(r.id, BTreeSet::new());
            for u in &r.component {
                owner[v].insert(index[u], index[&r.id.anchor.unwrap()]);
            }
        }
        rn.replicas.insert(nodes[v], replicas);
    }
    for v in 0..nodes.len() {
        for &u in &adj[v] {
            let a = ReplicaId { node: nodes[v], anchor: Some(nodes[owner[v][&u]]) };
            let b = ReplicaId { node: nodes[u], anchor: Some(nodes[owner[u][&v]]) };
            rn.adjacency.get_mut(&a).unwrap().insert(b);
        }
    }
    rn
}

/// Canonical form of an offline split, for equality checks.
pub fn offline_structure(g: &LevelGraph) -> ReplicaStructure {
    offline_ego_split(g).structure()
}

/// Ids of the `s` vectors most cosine-similar to `query`, by full sort with
/// ties broken by ascending id.
pub fn exhaustive_top_s(query: &[f64], nodes: &[(NodeId, Vec<f64>)], s: usize) -> Vec<NodeId> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let qn = norm(query);
    let mut scored: Vec<(f64, NodeId)> = nodes
        .iter()
        .map(|(id, v)| {
            let vn = norm(v);
            let dot: f64 = query.iter().zip(v).map(|(a, b)| a * b).sum();
            let cos = if qn == 0.0 || vn == 0.0 { 0.0 } else { dot / (qn * vn) };
            (cos, *id)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().take(s).map(|(_, id)| id).collect()
}

/// Label propagation over dense arrays: synchronous rounds over the active
/// set for up to `max_iters` rounds, then in-order sweeps until no label
/// moves. A replica that changes label activates its neighbors. Votes are
/// unweighted; a replica keeps its label when it ties for the lead, and
/// otherwise takes the smallest leading label.
pub fn reference_lpa(
    rn: &ReplicaNetwork,
    seed: &BTreeSet<ReplicaId>,
    max_iters: usize,
) -> BTreeMap<ReplicaId, ClusterLabel> {
    let ids: Vec<ReplicaId> = rn.adjacency.keys().copied().collect();
    let index: BTreeMap<ReplicaId, usize> = ids.iter().enumerate().map(|(i, r)| (*r, i)).collect();
    let adj: Vec<Vec<usize>> = ids.iter().map(|r| rn.adjacency[r].iter().map(|n| index[n]).collect()).collect();
    let mut labels: Vec<Option<u64>> = ids.iter().map(|r| rn.labels.get(r).map(|l| l.0)).collect();
    let mut active = vec![false; ids.len()];
    for r in seed {
        if let Some(&i) = index.get(r) {
            active[i] = true;
        }
    }

    let choose = |i: usize, labels: &[Option<u64>]| -> Option<u64> {
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for &n in &adj[i] {
            if let Some(l) = labels[n] {
                *counts.entry(l).or_insert(0) += 1;
            }
        }
        let top = counts.values().copied().max()?;
        match labels[i] {
            Some(c) if counts.get(&c) == Some(&top) => Some(c),
            _ => counts.iter().find(|(_, n)| **n == top).map(|(l, _)| *l),
        }
    };

    let mut settled = false;
    for _ in 0..max_iters {
        let moves: Vec<(usize, u64)> = (0..ids.len())
            .filter(|&i| active[i])
            .filter_map(|i| choose(i, &labels).filter(|l| Some(*l) != labels[i]).map(|l| (i, l)))
            .collect();
        if moves.is_empty() {
            settled = true;
            break;
        }
        for (i, l) in moves {
            labels[i] = Some(l);
            for &n in &adj[i] {
                active[n] = true;
            }
        }
    }
    while !settled {
        settled = true;
        for i in 0..ids.len() {
            if !active[i] {
                continue;
            }
            if let Some(l) = choose(i, &labels).filter(|l| Some(*l) != labels[i]) {
                labels[i] = Some(l);
                for &n in &adj[i] {
                    active[n] = true;
                }
                settled = false;
            }
        }
    }
    ids.into_iter().zip(labels).filter_map(|(r, l)| l.map(|l| (r, ClusterLabel(l)))).collect()
}
