use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Tunables for memory development and retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Weight of semantic similarity against positional proximity.
    pub alpha: f64,
    /// Decay width of the positional-proximity Gaussian, in chunks.
    pub sigma: f64,
    /// Edge threshold: chunk pairs must score strictly above this.
    pub theta: f64,
    /// Maximum new edges contributed by each new chunk.
    pub k: usize,
    /// Candidate count of the global localization stage.
    pub s: usize,
    pub max_lp_iters: usize,
    /// Expansion rounds of associative exploration.
    pub max_hops: usize,
    /// Approximate tokens per chunk.
    pub chunk_size: usize,
    /// A level gets a parent level only when it has more clusters and more
    /// nodes than this.
    pub min_level_size: usize,
    /// Cosine cut-off of the offline relevance selector.
    pub tau_sel: f64,
    /// Approximate token budget of the answer context.
    pub context_budget: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            sigma: 2.0,
            theta: 0.5,
            k: 10,
            s: 5,
            max_lp_iters: 20,
            max_hops: 3,
            chunk_size: 512,
            min_level_size: 4,
            tau_sel: 0.30,
            context_budget: 8_000,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |field: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::new(field, format!("must lie in [0,1], got {v}")))
            }
        };
        let positive = |field: &'static str, v: usize| {
            if v > 0 {
                Ok(())
            } else {
                Err(ConfigError::new(field, "must be a positive integer"))
            }
        };
        unit("alpha", self.alpha)?;
        unit("theta", self.theta)?;
        unit("tau_sel", self.tau_sel)?;
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(ConfigError::new("sigma", format!("must be a positive real, got {}", self.sigma)));
        }
        positive("k", self.k)?;
        positive("s", self.s)?;
        positive("max_lp_iters", self.max_lp_iters)?;
        positive("max_hops", self.max_hops)?;
        positive("min_level_size", self.min_level_size)?;
        positive("context_budget", self.context_budget)?;
        if self.chunk_size < 16 {
            return Err(ConfigError::new("chunk_size", format!("must be at least 16, got {}", self.chunk_size)));
        }
        Ok(())
    }
}
