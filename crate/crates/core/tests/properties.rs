use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::OnceLock;

use cam_core::cluster::{self, ClusterRegistry};
use cam_core::config::EngineConfig;
use cam_core::ego_split::{self, ReplicaNetwork};
use cam_core::embedding::Embedding;
use cam_core::graph::{GraphDelta, LevelGraph};
use cam_core::hierarchy::MemoryHierarchy;
use cam_core::ids::{NodeId, ReplicaId};
use cam_core::oracles;
use cam_core::persistence;
use cam_core::providers::{StubEmbedder, StubLanguageModel};
use cam_core::retrieval;
use cam_core::synthetic;
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Add(Vec<(usize, f64)>),
    Link(usize, usize, f64),
    Unlink(usize),
    Drop(usize),
}

fn op() -> impl Strategy<Value = Op> {
    let w = 0.05f64..=1.0;
    prop_oneof![
        4 => prop::collection::vec((any::<usize>(), w.clone()), 0..4).prop_map(Op::Add),
        2 => (any::<usize>(), any::<usize>(), w).prop_map(|(a, b, w)| Op::Link(a, b, w)),
        1 => any::<usize>().prop_map(Op::Unlink),
        1 => any::<usize>().prop_map(Op::Drop),
    ]
}

fn batches() -> impl Strategy<Value = Vec<Vec<Op>>> {
    prop::collection::vec(prop::collection::vec(op(), 1..12), 1..10)
}

struct Trace {
    g: LevelGraph,
    rn: ReplicaNetwork,
    reg: ClusterRegistry,
    next: u64,
}

impl Trace {
    fn new() -> Self {
        Trace { g: LevelGraph::new(0), rn: ReplicaNetwork::new(0), reg: ClusterRegistry::new(0), next: 0 }
    }

    fn delta(&mut self, ops: &[Op]) -> GraphDelta {
        let existing: Vec<NodeId> = self.g.nodes().collect();
        let edges: Vec<(NodeId, NodeId)> = self.g.edges().map(|(u, v, _)| (u, v)).collect();
        let mut d = GraphDelta::default();
        for o in ops {
            match o {
                Op::Drop(i) if !existing.is_empty() => d.removed_nodes.push(existing[i % existing.len()]),
                Op::Unlink(i) if !edges.is_empty() => d.removed_edges.push(edges[i % edges.len()]),
                _ => {}
            }
        }
        d.removed_nodes.sort();
        d.removed_nodes.dedup();
        d.removed_edges.sort();
        d.removed_edges.dedup();
        let mut pool: Vec<NodeId> = existing.into_iter().filter(|v| !d.removed_nodes.contains(v)).collect();
        let link = |u: NodeId, v: NodeId, w: f64, d: &mut GraphDelta| {
            if u != v {
                d.upserted_edges.push((u.min(v), u.max(v), w));
            }
        };
        for o in ops {
            match o {
                Op::Add(links) => {
                    let v = NodeId::chunk(self.next);
                    self.next += 1;
                    d.added_nodes.push(v);
                    for &(i, w) in links {
                        if !pool.is_empty() {
                            link(pool[i % pool.len()], v, w, &mut d);
                        }
                    }
                    pool.push(v);
                }
                Op::Link(a, b, w) if !pool.is_empty() => link(pool[a % pool.len()], pool[b % pool.len()], *w, &mut d),
                _ => {}
            }
        }
        d.upserted_edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        d.upserted_edges.dedup_by(|a, b| (a.0, a.1) == (b.0, b.1));
        d.removed_edges.retain(|(u, v)| !d.upserted_edges.iter().any(|e| (e.0, e.1) == (*u, *v)));
        d
    }

    fn step(&mut self, d: &GraphDelta, max_iters: usize) {
        let affected = self.g.apply(d);
        let rd = ego_split::rebuild_replicas(&affected, &self.g, &mut self.rn).unwrap();
        self.reg.absorb(&rd, &self.rn);
        let added: BTreeSet<ReplicaId> = rd.added.iter().copied().collect();
        cluster::init_labels(&added, &mut self.rn, &mut self.reg);
        cluster::propagate(&rd.touched_replicas(&self.rn), &mut self.rn, &mut self.reg, max_iters);
        let dirty = self.reg.dirty.clone();
        cluster::finalize(&dirty, &mut self.rn, &mut self.reg);
    }
}

fn disconnected_cluster(rn: &ReplicaNetwork) -> Option<ReplicaId> {
    let mut by_label: BTreeMap<_, BTreeSet<ReplicaId>> = BTreeMap::new();
    for (r, l) in &rn.labels {
        by_label.entry(*l).or_default().insert(*r);
    }
    by_label.values().find_map(|members| {
        let start = *members.first()?;
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(r) = queue.pop_front() {
            for n in rn.neighbors(r) {
                if members.contains(&n) && seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        (seen.len() != members.len()).then_some(start)
    })
}

fn build(chunks: &[cam_core::corpus::Chunk], schedule: &[usize]) -> Vec<MemoryHierarchy> {
    let (e, m) = (StubEmbedder::default(), StubLanguageModel::default());
    let mut h = MemoryHierarchy::new(EngineConfig::default()).unwrap();
    let mut states = Vec::new();
    let mut at = 0;
    let mut sizes = schedule.iter().cycle();
    while at < chunks.len() {
        let end = (at + sizes.next().unwrap()).min(chunks.len());
        h.integrate_batch(&chunks[at..end], &e, &m).unwrap();
        states.push(h.clone());
        at = end;
    }
    states
}

fn level0_edges(h: &MemoryHierarchy) -> Vec<(NodeId, NodeId, u64)> {
    h.level(0).unwrap().graph.edges().map(|(u, v, w)| (u, v, w.to_bits())).collect()
}

fn topic_memory() -> &'static MemoryHierarchy {
    static H: OnceLock<MemoryHierarchy> = OnceLock::new();
    H.get_or_init(|| build(&synthetic::topic_blocks(4, 30, 3), &[120]).pop().unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn replica_network_tracks_offline_split(ops in batches()) {
        let mut t = Trace::new();
        for batch in &ops {
            let d = t.delta(batch);
            t.step(&d, 20);
            prop_assert_eq!(t.rn.structure(), oracles::offline_structure(&t.g));
            prop_assert_eq!(t.rn.edge_count(), t.g.edge_count());
            for v in t.g.nodes() {
                let comps = ego_split::ego_components(v, &t.g).len();
                prop_assert_eq!(t.rn.replicas_of(v).len(), comps.max(1));
            }
        }
    }

    #[test]
    fn clusters_stay_total_connected_and_quiescent(ops in batches(), max_iters in prop::sample::select(vec![1usize, 3, 20])) {
        let mut t = Trace::new();
        for batch in &ops {
            let d = t.delta(batch);
            t.step(&d, max_iters);
            prop_assert!(t.rn.adjacency.keys().all(|r| t.rn.labels.contains_key(r)));
            prop_assert!(t.rn.labels.keys().all(|r| t.rn.adjacency.contains_key(r)));
            prop_assert_eq!(disconnected_cluster(&t.rn), None);
            let (mut rn, mut reg) = (t.rn.clone(), t.reg.clone());
            let all: BTreeSet<ReplicaId> = rn.adjacency.keys().copied().collect();
            prop_assert_eq!(cluster::propagate(&all, &mut rn, &mut reg, max_iters).label_changes, 0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_batch_leaves_a_consistent_hierarchy(
        per_topic in 4usize..16,
        seed in any::<u64>(),
        schedule in prop::collection::vec(1usize..40, 1..4),
    ) {
        let chunks = synthetic::topic_blocks(6, per_topic, seed);
        let theta = EngineConfig::default().theta;
        let states = build(&chunks, &schedule);
        let mut prev: Option<&MemoryHierarchy> = None;
        for h in &states {
            prop_assert!(h.check_consistency().is_ok(), "{:?}", h.check_consistency());
            let g = &h.level(0).unwrap().graph;
            prop_assert!(g.edges().all(|(_, _, w)| w > theta));
            if let Some(p) = prev {
                let old = &p.level(0).unwrap().graph;
                for u in old.nodes() {
                    for (v, w) in old.neighbors(u) {
                        prop_assert_eq!(g.weight(u, v), Some(w));
                    }
                    for (v, _) in g.neighbors(u) {
                        prop_assert!(!old.contains(v) || old.has_edge(u, v));
                    }
                }
            }
            for (l, lvl) in h.levels().iter().enumerate().take(h.depth().saturating_sub(1)) {
                for &v in lvl.nodes.keys() {
                    prop_assert!(!h.psi(l as u32, v).unwrap().is_empty());
                }
            }
            prev = Some(h);
        }
        let bulk = build(&chunks, &[chunks.len()]).pop().unwrap();
        prop_assert_eq!(level0_edges(states.last().unwrap()), level0_edges(&bulk));
    }

    #[test]
    fn snapshots_round_trip(per_topic in 1usize..12, seed in any::<u64>(), batch in 1usize..30) {
        let h = build(&synthetic::topic_blocks(6, per_topic, seed), &[batch]).pop().unwrap();
        let bytes = persistence::to_bytes(&h).unwrap();
        let back = persistence::from_bytes(&bytes).unwrap();
        prop_assert_eq!(persistence::to_bytes(&back).unwrap(), bytes);
        prop_assert_eq!(back.node_count(), h.node_count());
        for n in h.all_nodes() {
            prop_assert_eq!(back.node(n.id).map(|m| m.embedding.values()), Some(n.embedding.values()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn localize_matches_exhaustive_search(
        values in prop::collection::vec(-1.0f64..1.0, 256),
        s in 1usize..200,
    ) {
        let h = topic_memory();
        let nodes: Vec<(NodeId, Vec<f64>)> = h.all_nodes().map(|n| (n.id, n.embedding.values().to_vec())).collect();
        let got = retrieval::localize_embedding(&Embedding::new(values.clone()), h, s).unwrap();
        prop_assert_eq!(got, oracles::exhaustive_top_s(&values, &nodes, s));
    }

    #[test]
    fn exploration_offers_each_node_once_and_only_grows(
        words in prop::collection::vec(prop::sample::select(vec!["alpha", "beta", "gamma", "delta", "notes", "river"]), 1..4),
        s in 1usize..8,
        hops in 0usize..4,
    ) {
        let h = topic_memory();
        let e = StubEmbedder::default();
        let m = StubLanguageModel::default();
        let query = words.join(" ");
        let seeds = retrieval::localize(&query, h, &e, s).unwrap();
        let trace = retrieval::explore(&query, &seeds, h, &m, hops).unwrap();
        let mut offered = BTreeSet::new();
        let mut active = 0;
        for round in &trace.candidate_rounds {
            for v in &round.offered {
                prop_assert!(offered.insert(*v), "{v} offered twice");
            }
            prop_assert!(round.activated.iter().all(|v| round.offered.contains(v)));
            active += round.activated.len();
        }
        prop_assert_eq!(trace.final_activation.len(), active);
        prop_assert!(trace.hops_used <= hops);
        let again = retrieval::explore(&query, &seeds, h, &m, hops).unwrap();
        prop_assert_eq!(again.final_activation, trace.final_activation);
    }
}
