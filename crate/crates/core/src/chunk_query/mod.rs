//! Passage chunking, mask-centred query construction, and retriever
//! training-pair export.

mod chunker;
pub mod pairs;
mod query;

pub use chunker::{
    chunk_document, chunk_text, Chunk, ChunkConfig, ChunkError, ChunkStore, DocChunks, DEFAULT_CHUNK_OVERLAP,
    DEFAULT_CHUNK_SIZE, DEFAULT_SNAP_SLACK,
};
pub use pairs::{export_retriever_pairs, is_positive, PairLabel, PairSampleSpec, TrainingPair};
pub use query::{build_query, render_window, MaskQuery, QueryError, SpanSlot, DEFAULT_TOKEN_BUDGET};
