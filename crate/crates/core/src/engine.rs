//! Shared handle over a hierarchy: one writer at a time, any number of
//! readers, each working on the last committed version.

use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use crate::corpus::Chunk;
use crate::error::{CamError, Result};
use crate::hierarchy::{MemoryHierarchy, UpdateReport};
use crate::persistence;
use crate::providers::{Embedder, LanguageModel};
use crate::retrieval::{self, RetrievalParams, RetrievalTrace};

pub struct Engine {
    current: RwLock<Arc<MemoryHierarchy>>,
    writer: Mutex<()>,
    embedder: Arc<dyn Embedder>,
    llm: Arc<dyn LanguageModel>,
}

impl Engine {
    pub fn new(h: MemoryHierarchy, embedder: Arc<dyn Embedder>, llm: Arc<dyn LanguageModel>) -> Self {
        Self { current: RwLock::new(Arc::new(h)), writer: Mutex::new(()), embedder, llm }
    }

    /// The last committed hierarchy. It never changes under the caller.
    pub fn snapshot(&self) -> Arc<MemoryHierarchy> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Integrates a batch into a private copy and publishes it on success.
    pub fn ingest(&self, chunks: &[Chunk]) -> Result<UpdateReport> {
        let _w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if chunks.is_empty() {
            return Ok(UpdateReport::default());
        }
        let mut next = (*self.snapshot()).clone();
        let report = next.develop(chunks, self.embedder.as_ref(), self.llm.as_ref())?;
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        Ok(report)
    }

    pub fn respond(&self, query: &str, params: RetrievalParams) -> Result<(String, RetrievalTrace)> {
        let h = self.snapshot();
        retrieval::respond(query, &h, self.embedder.as_ref(), self.llm.as_ref(), params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let _w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        persistence::save(&self.snapshot(), path).map_err(CamError::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::providers::{FaultInjector, StubEmbedder, StubLanguageModel};
    use crate::synthetic;

    #[test]
    fn readers_see_whole_batches_only() {
        let engine = Engine::new(
            MemoryHierarchy::new(EngineConfig::default()).unwrap(),
            Arc::new(StubEmbedder::default()),
            Arc::new(StubLanguageModel::default()),
        );
        let chunks = synthetic::topic_blocks(4, 25, 1);
        std::thread::scope(|s| {
            s.spawn(|| {
                for b in chunks.chunks(10) {
                    engine.ingest(b).unwrap();
                }
            });
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..20 {
                        let h = engine.snapshot();
                        assert_eq!(h.level(0).unwrap().nodes.len() % 10, 0);
                        h.check_consistency().unwrap();
                    }
                });
            }
        });
        assert_eq!(engine.snapshot().level(0).unwrap().nodes.len(), 100);
        let (answer, _) = engine.respond("alpha", RetrievalParams::from(&EngineConfig::default())).unwrap();
        assert!(answer.contains("alpha"));
    }

    #[test]
    fn failed_ingest_publishes_nothing() {
        let chunks = synthetic::topic_blocks(2, 10, 1);
        let mut h = MemoryHierarchy::new(EngineConfig::default()).unwrap();
        h.integrate_batch(&chunks[..10], &StubEmbedder::default(), &StubLanguageModel::default()).unwrap();
        let engine = Engine::new(
            h,
            Arc::new(FaultInjector::new(StubEmbedder::default(), Some(0))),
            Arc::new(StubLanguageModel::default()),
        );
        let before = engine.snapshot();
        assert!(engine.ingest(&chunks[10..]).is_err());
        assert!(Arc::ptr_eq(&before, &engine.snapshot()));
    }
}
