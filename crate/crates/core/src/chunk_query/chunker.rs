use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyzer;
use crate::corpus::{Corpus, Document};

pub const DEFAULT_CHUNK_SIZE: usize = 600;
pub const DEFAULT_CHUNK_OVERLAP: usize = 200;
/// Maximum distance a boundary may move to land on whitespace.
pub const DEFAULT_SNAP_SLACK: usize = 50;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("chunk size {size} must exceed overlap {overlap}")]
    InvalidGeometry { size: usize, overlap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub size: usize,
    pub overlap: usize,
    #[serde(default = "default_slack")]
    pub slack: usize,
}

fn default_slack() -> usize {
    DEFAULT_SNAP_SLACK
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_CHUNK_OVERLAP,
            slack: DEFAULT_SNAP_SLACK,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.size <= self.overlap {
            return Err(ChunkError::InvalidGeometry {
                size: self.size,
                overlap: self.overlap,
            });
        }
        Ok(())
    }
}

/// A passage of a source document; offsets are code points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

pub fn chunk_document(doc: &Document, cfg: &ChunkConfig) -> Result<Vec<Chunk>, ChunkError> {
    chunk_text(&doc.doc_id, &doc.text, cfg)
}

/// Splits `text` into overlapping chunks of at most `cfg.size` code points.
///
/// A chunk ends on the last whitespace within `slack` of its nominal end
/// (exclusive of the whitespace), and the next chunk starts `overlap` code
/// points earlier, moved forward by up to `slack` to the next word start.
/// Consecutive chunks therefore share between `overlap - slack` and
/// `overlap` code points.
pub fn chunk_text(doc_id: &str, text: &str, cfg: &ChunkConfig) -> Result<Vec<Chunk>, ChunkError> {
    cfg.validate()?;
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut byte_at = Vec::with_capacity(n + 1);
    byte_at.extend(text.char_indices().map(|(b, _)| b));
    byte_at.push(text.len());

    let end_slack = cfg.slack.min(cfg.size - cfg.overlap - 1);
    let start_slack = cfg.slack.min(cfg.overlap.saturating_sub(1));

    let mut out = Vec::new();
    let mut start = 0usize;
    while start < n {
        let end = if n - start <= cfg.size {
            n
        } else {
            let nominal = start + cfg.size;
            (nominal - end_slack..=nominal)
                .rev()
                .find(|&p| chars[p].is_whitespace())
                .unwrap_or(nominal)
        };
        out.push(Chunk {
            chunk_id: format!("{doc_id}#{}", out.len()),
            doc_id: doc_id.to_string(),
            start,
            end,
            text: text[byte_at[start]..byte_at[end]].to_string(),
        });
        if end == n {
            break;
        }
        let nominal_next = end - cfg.overlap;
        start = (nominal_next..=nominal_next + start_slack)
            .find(|&q| q > 0 && chars[q - 1].is_whitespace() && !chars[q].is_whitespace())
            .unwrap_or(nominal_next);
    }
    Ok(out)
}

/// Chunks of one document plus their analyzer-normalized text.
#[derive(Debug, Clone)]
pub struct DocChunks {
    pub chunks: Vec<Chunk>,
    pub normalized: Vec<String>,
    pub doc_normalized: String,
}

/// Chunks for a set of documents, computed once and shared read-only.
#[derive(Debug, Clone, Default)]
pub struct ChunkStore {
    docs: HashMap<String, Arc<DocChunks>>,
}

impl ChunkStore {
    pub fn build<'a>(
        corpus: &Corpus,
        doc_ids: impl IntoIterator<Item = &'a String>,
        cfg: &ChunkConfig,
    ) -> Result<Self, ChunkError> {
        cfg.validate()?;
        let ids: Vec<&String> = doc_ids.into_iter().collect();
        let docs = ids
            .par_iter()
            .filter_map(|id| corpus.document(id))
            .map(|doc| {
                let chunks = chunk_document(doc, cfg)?;
                let normalized = chunks.iter().map(|c| analyzer::normalized(&c.text)).collect();
                Ok((
                    doc.doc_id.clone(),
                    Arc::new(DocChunks {
                        chunks,
                        normalized,
                        doc_normalized: analyzer::normalized(&doc.text),
                    }),
                ))
            })
            .collect::<Result<HashMap<_, _>, ChunkError>>()?;
        Ok(Self { docs })
    }

    pub fn get(&self, doc_id: &str) -> Option<&Arc<DocChunks>> {
        self.docs.get(doc_id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}
