//! Deterministic offline providers.
//!
//! The embedder hashes each whitespace token (lower-cased, with leading and
//! trailing punctuation removed) into one of `dim` buckets with XXH64 under
//! [`STUB_HASH_SEED`], then L2-normalizes the bucket counts. Texts without
//! any token embed to the zero vector.

use std::collections::BTreeSet;

use xxhash_rust::xxh64::xxh64;

use super::{reject_empty, Embedder, LanguageModel, NO_CONTEXT};
use crate::embedding::{cosine, Embedding};
use crate::error::ProviderError;
use crate::ids::NodeId;

pub const STUB_HASH_SEED: u64 = 0x00C4_A11E_5EED_0001;
pub const DEFAULT_STUB_DIM: usize = 256;

#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dim: usize,
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_STUB_DIM)
    }
}

impl StubEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "stub embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bucket a token lands in, or `None` when normalization leaves nothing.
    pub fn bucket(&self, token: &str) -> Option<usize> {
        let t = normalize_token(token);
        (!t.is_empty()).then(|| (xxh64(t.as_bytes(), STUB_HASH_SEED) % self.dim as u64) as usize)
    }

    pub fn embed(&self, text: &str) -> Embedding {
        let mut v = vec![0.0; self.dim];
        for b in text.split_whitespace().filter_map(|t| self.bucket(t)) {
            v[b] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Embedding::new(v)
    }
}

fn normalize_token(token: &str) -> String {
    token.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

impl Embedder for StubEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        reject_empty(texts)?;
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}

/// Offline summarizer, selector and answerer built on [`StubEmbedder`].
#[derive(Debug, Clone)]
pub struct StubLanguageModel {
    embedder: StubEmbedder,
    tau_sel: f64,
}

impl Default for StubLanguageModel {
    fn default() -> Self {
        Self::new(StubEmbedder::default(), 0.30)
    }
}

impl StubLanguageModel {
    pub fn new(embedder: StubEmbedder, tau_sel: f64) -> Self {
        Self { embedder, tau_sel }
    }
}

/// Text up to and including the first period, else the first 20 words.
fn first_sentence(text: &str) -> String {
    match text.find('.') {
        Some(i) => text[..=i].split_whitespace().collect::<Vec<_>>().join(" "),
        None => text.split_whitespace().take(20).collect::<Vec<_>>().join(" "),
    }
}

impl LanguageModel for StubLanguageModel {
    fn summarize(&self, texts: &[String], level: u32) -> Result<String, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidInput("nothing to summarize".into()));
        }
        let mut out = format!("SUMMARY[{level}]:");
        for t in texts {
            let s = first_sentence(t);
            if !s.is_empty() {
                out.push(' ');
                out.push_str(&s);
            }
        }
        Ok(out)
    }

    fn select_relevant(
        &self,
        query: &str,
        candidates: &[(NodeId, String)],
    ) -> Result<BTreeSet<NodeId>, ProviderError> {
        let q = self.embedder.embed(query);
        Ok(candidates
            .iter()
            .filter(|(_, text)| cosine(&q, &self.embedder.embed(text)) >= self.tau_sel)
            .map(|(id, _)| *id)
            .collect())
    }

    fn answer(&self, query: &str, context_blocks: &[String]) -> Result<String, ProviderError> {
        if context_blocks.is_empty() {
            return Ok(NO_CONTEXT.to_string());
        }
        let q = self.embedder.embed(query);
        let mut scored: Vec<(usize, f64)> = context_blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (i, cosine(&q, &self.embedder.embed(b))))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored
            .iter()
            .take(3)
            .map(|(i, _)| context_blocks[*i].as_str())
            .collect::<Vec<_>>()
            .join("\n\n"))
    }
}
