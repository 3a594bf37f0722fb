//! Retriever training-pair export.
//!
//! A passage is a positive for a span when it contains the span's gold
//! surface or any recorded spelling variant as a whole-term,
//! case-insensitive run (see [`crate::analyzer::contains_terms`]). Spans
//! with fewer than two positive chunks are skipped: the original document
//! always supplies one.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_query, ChunkStore, SpanSlot};
use crate::analyzer::{self, Analyzer};
use crate::corpus::{Corpus, KnowledgeLevel, LevelSets, MaskedSpan};
use crate::sparse::InvertedIndex;

#[derive(Debug, thiserror::Error)]
pub enum PairError {
    #[error("no span has at least {0} positive chunks")]
    NoEligibleSpans(usize),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Query(#[from] super::QueryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Pos,
    Neg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub query: String,
    pub passage: String,
    pub label: PairLabel,
    pub span_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSampleSpec {
    pub level: KnowledgeLevel,
    pub top_docs: usize,
    pub min_positives: usize,
    pub max_positives_per_span: usize,
    pub negatives_per_span: usize,
    pub max_spans: Option<usize>,
    pub token_budget: usize,
    pub seed: u64,
}

impl Default for PairSampleSpec {
    fn default() -> Self {
        Self {
            level: KnowledgeLevel::L4,
            top_docs: crate::sparse::DEFAULT_TOP_DOCS,
            min_positives: 2,
            max_positives_per_span: 8,
            negatives_per_span: 8,
            max_spans: None,
            token_budget: super::DEFAULT_TOKEN_BUDGET,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportStats {
    pub spans_considered: usize,
    pub spans_exported: usize,
    pub spans_skipped: usize,
    pub positives: usize,
    pub negatives: usize,
}

/// Positive-label test on an analyzer-normalized passage.
pub fn is_positive(passage_normalized: &str, span: &MaskedSpan) -> bool {
    span.gold_forms()
        .any(|g| analyzer::contains_terms(passage_normalized, g))
}

pub fn label_for(passage: &str, span: &MaskedSpan) -> PairLabel {
    if is_positive(&analyzer::normalized(passage), span) {
        PairLabel::Pos
    } else {
        PairLabel::Neg
    }
}

/// Writes training pairs as JSONL to `out`.
///
/// Candidate passages are the chunks of the sparse stage's top documents for
/// each masked document at `spec.level`.
pub fn export_retriever_pairs(
    corpus: &Corpus,
    levels: &LevelSets,
    index: &InvertedIndex,
    chunks: &ChunkStore,
    analyzer: &Analyzer,
    spec: &PairSampleSpec,
    out: &mut dyn Write,
) -> Result<ExportStats, PairError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut stats = ExportStats::default();
    'docs: for md in corpus.masked_documents() {
        let kb = levels.assemble(spec.level, &md.doc_id, corpus)?;
        let hits = index.retrieve_excluding(&md.masked_text, spec.top_docs, &kb.excluded);
        let slots: Vec<SpanSlot> = md
            .spans
            .iter()
            .map(|s| SpanSlot {
                span_id: s.span_id.clone(),
                start: s.start,
                end: s.end,
                placeholder: s.placeholder.clone(),
            })
            .collect();
        for (span, slot) in md.spans.iter().zip(&slots) {
            if span.gold_surface.is_none() {
                continue;
            }
            if spec.max_spans.is_some_and(|m| stats.spans_exported >= m) {
                break 'docs;
            }
            stats.spans_considered += 1;
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for hit in &hits {
                let Some(dc) = chunks.get(&hit.target_id) else {
                    continue;
                };
                for (c, norm) in dc.chunks.iter().zip(&dc.normalized) {
                    if is_positive(norm, span) {
                        pos.push(c);
                    } else {
                        neg.push(c);
                    }
                }
            }
            if pos.len() < spec.min_positives {
                stats.spans_skipped += 1;
                continue;
            }
            let query = build_query(&md.masked_text, slot, &slots, analyzer, spec.token_budget)?;
            pos.truncate(spec.max_positives_per_span);
            neg.shuffle(&mut rng);
            neg.truncate(spec.negatives_per_span);
            for (c, label) in pos
                .iter()
                .map(|c| (c, PairLabel::Pos))
                .chain(neg.iter().map(|c| (c, PairLabel::Neg)))
            {
                let pair = TrainingPair {
                    query: query.text.clone(),
                    passage: c.text.clone(),
                    label,
                    span_id: span.span_id.clone(),
                };
                serde_json::to_writer(&mut *out, &pair).map_err(std::io::Error::other)?;
                out.write_all(b"\n")?;
            }
            stats.positives += pos.len();
            stats.negatives += neg.len();
            stats.spans_exported += 1;
        }
    }
    if stats.spans_exported == 0 {
        return Err(PairError::NoEligibleSpans(spec.min_positives));
    }
    Ok(stats)
}
