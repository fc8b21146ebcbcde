//! Document loading, word-count chunking and batching.
//!
//! Token counts are approximated by whitespace-delimited words, and chunk
//! boundaries always fall between words.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::IngestError;

pub const MIN_CHUNK_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { doc_id: doc_id.into(), text: text.into() }
    }
}

/// A positioned run of document text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    /// Position within the document, counting from 0.
    pub seq_index: u64,
    pub text: String,
    pub approx_tokens: usize,
}

impl Chunk {
    pub fn new(doc_id: impl Into<String>, seq_index: u64, text: impl Into<String>) -> Self {
        let text = text.into();
        let approx_tokens = approx_tokens(&text);
        Self { doc_id: doc_id.into(), seq_index, text, approx_tokens }
    }
}

pub fn approx_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Splits a document into chunks of at most `chunk_size` words. Each chunk is
/// a verbatim slice of the source, so whitespace inside a chunk survives.
pub fn split_document(doc: &Document, chunk_size: usize) -> Result<Vec<Chunk>, IngestError> {
    if chunk_size < MIN_CHUNK_SIZE {
        return Err(IngestError::ChunkSizeTooSmall(chunk_size));
    }
    let base = doc.text.as_ptr() as usize;
    let spans: Vec<(usize, usize)> = doc
        .text
        .split_whitespace()
        .map(|w| {
            let start = w.as_ptr() as usize - base;
            (start, start + w.len())
        })
        .collect();

    Ok(spans
        .chunks(chunk_size)
        .enumerate()
        .map(|(i, words)| {
            let start = words[0].0;
            let end = words[words.len() - 1].1;
            Chunk {
                doc_id: doc.doc_id.clone(),
                seq_index: i as u64,
                text: doc.text[start..end].to_string(),
                approx_tokens: words.len(),
            }
        })
        .collect())
}

/// Order-preserving partition into batches of `batch_size` (the last batch
/// may be shorter). A zero batch size is treated as 1.
pub fn make_batches(chunks: Vec<Chunk>, batch_size: usize) -> Vec<Vec<Chunk>> {
    let batch_size = batch_size.max(1);
    let mut batches = Vec::with_capacity(chunks.len().div_ceil(batch_size));
    let mut it = chunks.into_iter().peekable();
    while it.peek().is_some() {
        batches.push(it.by_ref().take(batch_size).collect());
    }
    batches
}

/// Checks that every document id is non-empty and unique.
pub fn validate_documents(docs: &[Document]) -> Result<(), IngestError> {
    let mut seen = HashSet::new();
    for d in docs {
        if d.doc_id.is_empty() {
            return Err(IngestError::EmptyDocId);
        }
        if !seen.insert(d.doc_id.as_str()) {
            return Err(IngestError::DuplicateDocId(d.doc_id.clone()));
        }
    }
    Ok(())
}

/// Reads documents from a JSON-Lines file (`{"doc_id", "text"}` per line,
/// recognised by a `.jsonl` extension), a plain-text file (one document named
/// after the file stem), or a directory of such files in name order.
pub fn load_documents(path: &Path) -> Result<Vec<Document>, IngestError> {
    let input_err = |message: String| IngestError::Input { path: path.display().to_string(), message };
    let mut docs = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)
            .map_err(|e| input_err(e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for p in entries {
            docs.extend(load_documents(&p)?);
        }
    } else {
        let raw = fs::read_to_string(path).map_err(|e| input_err(e.to_string()))?;
        if path.extension().is_some_and(|e| e == "jsonl") {
            for (lineno, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let doc: Document = serde_json::from_str(line)
                    .map_err(|e| input_err(format!("line {}: {e}", lineno + 1)))?;
                docs.push(doc);
            }
        } else {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            docs.push(Document::new(stem, raw));
        }
    }
    validate_documents(&docs)?;
    Ok(docs)
}
