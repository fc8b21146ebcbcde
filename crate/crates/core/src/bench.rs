//! Batch-size scaling measurements with stub providers.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::config::EngineConfig;
use crate::corpus::Chunk;
use crate::error::Result;
use crate::hierarchy::MemoryHierarchy;
use crate::ids::NodeId;
use crate::providers::{Embedder, LanguageModel};

pub const CSV_HEADER: &str = "batch_size,mean_batch_s,p95_batch_s,replicas_recomputed_mean,offline_rebuild_s,speedup";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub batch_size: usize,
    pub per_batch_wall_time: Vec<Duration>,
    /// Level-0 ego recomputations per batch.
    pub replicas_recomputed: Vec<usize>,
    /// Size of the new nodes plus their neighbors, per batch.
    pub neighborhood_bound: Vec<usize>,
    pub offline_rebuild_time: Duration,
    pub speedup_ratio: f64,
}

impl BenchResult {
    pub fn mean_batch_s(&self) -> f64 {
        let n = self.per_batch_wall_time.len().max(1) as f64;
        self.per_batch_wall_time.iter().map(Duration::as_secs_f64).sum::<f64>() / n
    }

    pub fn p95_batch_s(&self) -> f64 {
        let mut t: Vec<f64> = self.per_batch_wall_time.iter().map(Duration::as_secs_f64).collect();
        if t.is_empty() {
            return 0.0;
        }
        t.sort_by(f64::total_cmp);
        let rank = ((0.95 * t.len() as f64).ceil() as usize).clamp(1, t.len());
        t[rank - 1]
    }

    pub fn replicas_recomputed_mean(&self) -> f64 {
        let n = self.replicas_recomputed.len().max(1) as f64;
        self.replicas_recomputed.iter().sum::<usize>() as f64 / n
    }

    pub fn within_neighborhood_bound(&self) -> bool {
        self.replicas_recomputed.iter().zip(&self.neighborhood_bound).all(|(r, b)| r <= b)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.2},{:.6},{:.3}",
            self.batch_size,
            self.mean_batch_s(),
            self.p95_batch_s(),
            self.replicas_recomputed_mean(),
            self.offline_rebuild_time.as_secs_f64(),
            self.speedup_ratio
        )
    }
}

/// Time to build the whole hierarchy from `chunks` in one batch.
pub fn offline_rebuild(
    chunks: &[Chunk],
    config: &EngineConfig,
    embedder: &dyn Embedder,
    llm: &dyn LanguageModel,
) -> Result<(Duration, MemoryHierarchy)> {
    let mut h = MemoryHierarchy::new(config.clone())?;
    let t = Instant::now();
    h.integrate_batch(chunks, embedder, llm)?;
    Ok((t.elapsed(), h))
}

/// Ingests `chunks` in batches of `batch_size`, timing each batch.
pub fn run_batches(
    chunks: &[Chunk],
    batch_size: usize,
    offline: Duration,
    config: &EngineConfig,
    embedder: &dyn Embedder,
    llm: &dyn LanguageModel,
) -> Result<BenchResult> {
    let mut h = MemoryHierarchy::new(config.clone())?;
    let mut result = BenchResult {
        batch_size,
        per_batch_wall_time: Vec::new(),
        replicas_recomputed: Vec::new(),
        neighborhood_bound: Vec::new(),
        offline_rebuild_time: offline,
        speedup_ratio: 0.0,
    };
    let mut next = 0u64;
    for batch in chunks.chunks(batch_size.max(1)) {
        let t = Instant::now();
        let report = h.integrate_batch(batch, embedder, llm)?;
        result.per_batch_wall_time.push(t.elapsed());
        result.replicas_recomputed.push(report.level(0).map_or(0, |l| l.replicas_recomputed));

        let g = &h.level(0).expect("level 0 always exists").graph;
        let fresh = (next..next + batch.len() as u64).map(NodeId::chunk);
        let hood: BTreeSet<NodeId> = fresh.flat_map(|v| std::iter::once(v).chain(g.neighbors(v).map(|(u, _)| u))).collect();
        result.neighborhood_bound.push(hood.len());
        next += batch.len() as u64;
    }
    result.speedup_ratio = offline.as_secs_f64() / result.mean_batch_s().max(f64::MIN_POSITIVE);
    Ok(result)
}

/// One [`BenchResult`] per batch size, sharing a single offline rebuild.
pub fn run(
    chunks: &[Chunk],
    batch_sizes: &[usize],
    config: &EngineConfig,
    embedder: &dyn Embedder,
    llm: &dyn LanguageModel,
) -> Result<Vec<BenchResult>> {
    let (offline, _) = offline_rebuild(chunks, config, embedder, llm)?;
    batch_sizes.iter().map(|&b| run_batches(chunks, b, offline, config, embedder, llm)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{StubEmbedder, StubLanguageModel};
    use crate::synthetic;

    #[test]
    fn rows_have_the_csv_shape() {
        let chunks = synthetic::bench_chunks(120, 30, 7);
        let (e, m) = (StubEmbedder::default(), StubLanguageModel::default());
        let rows = run(&chunks, &[1, 40], &EngineConfig::default(), &e, &m).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].per_batch_wall_time.len(), 120);
        assert_eq!(rows[1].per_batch_wall_time.len(), 3);
        for r in &rows {
            assert!(r.within_neighborhood_bound());
            assert!(r.speedup_ratio > 0.0);
            assert_eq!(r.csv_row().split(',').count(), CSV_HEADER.split(',').count());
        }
    }

    #[test]
    fn p95_picks_the_nearest_rank() {
        let r = BenchResult {
            batch_size: 1,
            per_batch_wall_time: (1..=20).map(Duration::from_secs).collect(),
            replicas_recomputed: vec![],
            neighborhood_bound: vec![],
            offline_rebuild_time: Duration::ZERO,
            speedup_ratio: 0.0,
        };
        assert_eq!(r.p95_batch_s(), 19.0);
    }
}

