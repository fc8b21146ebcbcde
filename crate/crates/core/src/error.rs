use thiserror::Error;

use crate::ids::{NodeId, ReplicaId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed identifier: {0:?}")]
pub struct ParseIdError(pub String);

/// Failures from an embedding or language-model provider.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider returned HTTP {status} after {attempts} attempt(s): {body}")]
    Http { status: u16, attempts: u32, body: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("invalid provider input: {0}")]
    InvalidInput(String),
    #[error("unexpected provider response: {0}")]
    Protocol(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("injected failure at call {0}")]
    Injected(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration: {field} {message}")]
pub struct ConfigError {
    pub field: &'static str,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self { field, message: message.into() }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("chunk size {0} is below the minimum of 16 tokens")]
    ChunkSizeTooSmall(usize),
    #[error("document id must be non-empty")]
    EmptyDocId,
    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),
    #[error("{path}: {message}")]
    Input { path: String, message: String },
}

/// A violated structural invariant, found by the consistency checker or while
/// loading a snapshot.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("integrity violation: {0}")]
pub struct IntegrityError(pub String);

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported snapshot format version {found} (supported: {supported})")]
    Version { found: u64, supported: u64 },
    #[error("snapshot integrity check failed: expected digest {expected}, actual digest {actual}")]
    Checksum { expected: String, actual: String },
    #[error("malformed snapshot at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error)]
pub enum CamError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("pair score is only defined between chunk nodes, got {0}")]
    NotAChunk(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown level {0}")]
    UnknownLevel(u32),
    #[error("edge ({0}, {1}) has no matching ego component: stale replica set")]
    StaleReplica(NodeId, NodeId),
    #[error("replica {0} is not part of the replica network")]
    UnknownReplica(ReplicaId),
    #[error("empty memory")]
    EmptyMemory,
}

pub type Result<T, E = CamError> = std::result::Result<T, E>;
