//! Embedding and language-model providers.
//!
//! Every engine dependency on a model goes through [`Embedder`] or
//! [`LanguageModel`]. The [`stub`] implementations are deterministic and
//! offline; [`remote`] speaks the OpenAI-compatible HTTP protocol.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::embedding::Embedding;
use crate::error::ProviderError;
use crate::ids::NodeId;

pub mod remote;
pub mod stub;

pub use remote::{HttpResponse, OpenAiClient, ProviderConfig, Transport, UreqTransport};
pub use stub::{StubEmbedder, StubLanguageModel};

pub const SUMMARIZE_PROMPT: &str = include_str!("../../prompts/summarize.txt");
pub const SELECT_PROMPT: &str = include_str!("../../prompts/select.txt");
pub const ANSWER_PROMPT: &str = include_str!("../../prompts/answer.txt");

/// Reply of [`LanguageModel::answer`] when no context was retrieved.
pub const NO_CONTEXT: &str = "NO_CONTEXT";

pub trait Embedder: Send + Sync {
    /// One vector per input text, in input order. Empty input yields empty
    /// output; an empty text is rejected.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError>;
}

pub trait LanguageModel: Send + Sync {
    fn summarize(&self, texts: &[String], level: u32) -> Result<String, ProviderError>;

    /// Picks the candidates that help answer `query`.
    fn select_relevant(
        &self,
        query: &str,
        candidates: &[(NodeId, String)],
    ) -> Result<BTreeSet<NodeId>, ProviderError>;

    fn answer(&self, query: &str, context_blocks: &[String]) -> Result<String, ProviderError>;
}

pub(crate) fn reject_empty(texts: &[String]) -> Result<(), ProviderError> {
    match texts.iter().position(|t| t.trim().is_empty()) {
        Some(i) => Err(ProviderError::InvalidInput(format!("text #{i} is empty"))),
        None => Ok(()),
    }
}

/// Wraps a provider and fails the `n`-th call (0-based, counted across all
/// provider methods). Used to exercise batch rollback.
#[derive(Debug)]
pub struct FaultInjector<P> {
    inner: P,
    fail_at: Option<usize>,
    calls: AtomicUsize,
}

impl<P> FaultInjector<P> {
    pub fn new(inner: P, fail_at: Option<usize>) -> Self {
        Self { inner, fail_at, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn tick(&self) -> Result<(), ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail_at == Some(n) {
            Err(ProviderError::Injected(n))
        } else {
            Ok(())
        }
    }
}

impl<P: Embedder> Embedder for FaultInjector<P> {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        self.tick()?;
        self.inner.embed_batch(texts)
    }
}

impl<P: LanguageModel> LanguageModel for FaultInjector<P> {
    fn summarize(&self, texts: &[String], level: u32) -> Result<String, ProviderError> {
        self.tick()?;
        self.inner.summarize(texts, level)
    }

    fn select_relevant(
        &self,
        query: &str,
        candidates: &[(NodeId, String)],
    ) -> Result<BTreeSet<NodeId>, ProviderError> {
        self.tick()?;
        self.inner.select_relevant(query, candidates)
    }

    fn answer(&self, query: &str, context_blocks: &[String]) -> Result<String, ProviderError> {
        self.tick()?;
        self.inner.answer(query, context_blocks)
    }
}

/// Counts calls per method, for instrumentation tests.
#[derive(Debug, Default)]
pub struct CallCounter<P> {
    pub inner: P,
    pub embed_calls: AtomicUsize,
    pub summarize_calls: AtomicUsize,
    pub select_calls: AtomicUsize,
}

impl<P> CallCounter<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            embed_calls: AtomicUsize::new(0),
            summarize_calls: AtomicUsize::new(0),
            select_calls: AtomicUsize::new(0),
        }
    }

    pub fn summarize_count(&self) -> usize {
        self.summarize_calls.load(Ordering::SeqCst)
    }
}

impl<P: Embedder> Embedder for CallCounter<P> {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed_batch(texts)
    }
}

impl<P: LanguageModel> LanguageModel for CallCounter<P> {
    fn summarize(&self, texts: &[String], level: u32) -> Result<String, ProviderError> {
        self.summarize_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.summarize(texts, level)
    }

    fn select_relevant(
        &self,
        query: &str,
        candidates: &[(NodeId, String)],
    ) -> Result<BTreeSet<NodeId>, ProviderError> {
        self.select_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.select_relevant(query, candidates)
    }

    fn answer(&self, query: &str, context_blocks: &[String]) -> Result<String, ProviderError> {
        self.inner.answer(query, context_blocks)
    }
}
