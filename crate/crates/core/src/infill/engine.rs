use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::postprocess::postprocess_hypothesis;
use super::prompt::{render_prompt, InfillMode, PromptError};
use super::schedule::{document_seed, schedule_spans};
use super::transcript::{request_key, TranscriptCache};
use crate::analyzer::Analyzer;
use crate::backend::{BackendError, InfillBackend, InfillCall, InfillRequest};
use crate::chunk_query::{build_query, is_positive, render_window, Chunk, ChunkStore, QueryError, SpanSlot};
use crate::corpus::{KnowledgeBase, KnowledgeLevel, MaskedDocument};
use crate::dense::{DenseError, DenseScorer};
use crate::sparse::{InvertedIndex, ScoredHit};
use crate::text::{cp_len, splice_cp, CharIndex};

pub const DEFAULT_CONTEXT_WINDOW: usize = 200;
pub const DEFAULT_MAX_TOKENS: u32 = 32;
pub const MAX_PASSAGES: usize = 10;

/// Named passage-count presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfillPreset {
    Glm1,
    Glm2,
    Mistral10,
}

impl InfillPreset {
    pub fn k_passages(self) -> usize {
        match self {
            InfillPreset::Glm1 => 1,
            InfillPreset::Glm2 => 2,
            InfillPreset::Mistral10 => 10,
        }
    }
}

impl FromStr for InfillPreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "glm1" => Ok(Self::Glm1),
            "glm2" => Ok(Self::Glm2),
            "mistral10" => Ok(Self::Mistral10),
            _ => Err(format!("unknown infill preset `{s}` (expected glm1, glm2 or mistral10)")),
        }
    }
}

impl fmt::Display for InfillPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InfillPreset::Glm1 => "glm1",
            InfillPreset::Glm2 => "glm2",
            InfillPreset::Mistral10 => "mistral10",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfillConfig {
    pub k_passages: usize,
    /// Characters of working text kept on each side of the span.
    pub context_window_chars: usize,
    pub order_seed: u64,
    pub mode: InfillMode,
    /// Dense query budget in analyzer tokens.
    pub token_budget: usize,
    pub max_tokens: u32,
}

impl InfillConfig {
    pub fn preset(preset: InfillPreset, order_seed: u64) -> Self {
        Self {
            k_passages: preset.k_passages(),
            context_window_chars: DEFAULT_CONTEXT_WINDOW,
            order_seed,
            mode: InfillMode::Retrieval,
            token_budget: crate::chunk_query::DEFAULT_TOKEN_BUDGET,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn no_retrieval(order_seed: u64) -> Self {
        Self {
            k_passages: 0,
            mode: InfillMode::NoRetrieval,
            ..Self::preset(InfillPreset::Glm1, order_seed)
        }
    }

    /// Forces the retrieval-free shape (used for L1).
    pub fn without_retrieval(mut self) -> Self {
        self.k_passages = 0;
        self.mode = InfillMode::NoRetrieval;
        self
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        match self.mode {
            InfillMode::NoRetrieval if self.k_passages != 0 => {
                errs.push(format!("no_retrieval mode requires k_passages = 0, got {}", self.k_passages))
            }
            InfillMode::Retrieval if !(1..=MAX_PASSAGES).contains(&self.k_passages) => errs.push(format!(
                "retrieval mode requires k_passages in 1..={MAX_PASSAGES}, got {}",
                self.k_passages
            )),
            _ => {}
        }
        if self.token_budget == 0 {
            errs.push("token_budget must be at least 1".into());
        }
        if self.max_tokens == 0 {
            errs.push("max_tokens must be at least 1".into());
        }
        errs
    }

    /// Stable hash of the config plus anything else that shapes outputs.
    pub fn fingerprint(&self, extra: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        for e in extra {
            h.update((e.len() as u64).to_le_bytes());
            h.update(e.as_bytes());
        }
        hex::encode(h.finalize())[..16].to_string()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum InfillError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("offset bookkeeping broke at span `{span_id}`: expected {expected:?} at [{start}, {end}), found {found:?}")]
    OffsetDesync {
        span_id: String,
        expected: String,
        start: usize,
        end: usize,
        found: String,
    },
    #[error("transcript cache: {0}")]
    Transcript(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillResult {
    pub span_id: String,
    pub hypothesis: String,
    pub passages_used: Vec<String>,
    pub order_index: usize,
    pub raw_backend_output: String,
    pub transcript_key: String,
}

/// Dense-stage record for one span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseTrace {
    pub n_candidates: usize,
    /// 1-based rank of the first chunk containing the gold, over all candidates.
    pub first_relevant_rank: Option<usize>,
    pub top_chunks: Vec<String>,
}

/// What the retrieval stages saw for one document, kept for evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocumentTrace {
    pub retrieval: bool,
    pub sparse_hits: Vec<ScoredHit>,
    /// Per span with a gold surface: does any retrieved document contain it?
    pub covered: BTreeMap<String, bool>,
    pub dense: BTreeMap<String, DenseTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReidentifiedDocument {
    pub doc_id: String,
    pub final_text: String,
    pub results: Vec<InfillResult>,
    pub config_fingerprint: String,
    pub level: KnowledgeLevel,
    pub schedule_seed: u64,
    pub schedule: Vec<String>,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub trace: DocumentTrace,
}

impl ReidentifiedDocument {
    pub fn result(&self, span_id: &str) -> Option<&InfillResult> {
        self.results.iter().find(|r| r.span_id == span_id)
    }
}

/// Sparse index plus chunk store for one knowledge level.
pub struct RetrievalStage<'a> {
    pub index: &'a InvertedIndex,
    pub chunks: &'a ChunkStore,
    pub top_docs: usize,
    pub dense: DenseScorer<'a>,
}

pub struct Backends<'a> {
    pub infiller: &'a dyn InfillBackend,
    pub retrieval: Option<RetrievalStage<'a>>,
    pub transcripts: &'a TranscriptCache,
}

/// Masked text being filled in, with live offsets for every span.
#[derive(Debug, Clone)]
pub struct WorkingDocument {
    text: String,
    slots: Vec<SpanSlot>,
    resolved: Vec<bool>,
}

impl WorkingDocument {
    pub fn new(md: &MaskedDocument) -> Self {
        Self {
            text: md.masked_text.clone(),
            slots: md
                .spans
                .iter()
                .map(|s| SpanSlot {
                    span_id: s.span_id.clone(),
                    start: s.start,
                    end: s.end,
                    placeholder: s.placeholder.clone(),
                })
                .collect(),
            resolved: vec![false; md.spans.len()],
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn into_text(self) -> String {
        self.text
    }

    pub fn slot(&self, i: usize) -> &SpanSlot {
        &self.slots[i]
    }

    pub fn position(&self, span_id: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.span_id == span_id)
    }

    pub fn unresolved(&self) -> Vec<SpanSlot> {
        self.slots
            .iter()
            .zip(&self.resolved)
            .filter(|(_, r)| !**r)
            .map(|(s, _)| s.clone())
            .collect()
    }

    /// Every unresolved slot still points at its placeholder.
    pub fn verify(&self) -> Result<(), InfillError> {
        let idx = CharIndex::new(&self.text);
        for (s, _) in self.slots.iter().zip(&self.resolved).filter(|(_, r)| !**r) {
            s.check(&idx).map_err(|_| InfillError::OffsetDesync {
                span_id: s.span_id.clone(),
                expected: s.placeholder.clone(),
                start: s.start,
                end: s.end,
                found: idx.slice(s.start.min(idx.len()), s.end.min(idx.len())).to_string(),
            })?;
        }
        Ok(())
    }

    /// Replaces slot `i`'s placeholder and shifts every slot after it.
    pub fn substitute(&mut self, i: usize, hypothesis: &str) -> Result<(), InfillError> {
        let s = self.slots[i].clone();
        let idx = CharIndex::new(&self.text);
        if self.resolved[i] || s.end > idx.len() || idx.slice(s.start, s.end) != s.placeholder {
            return Err(InfillError::OffsetDesync {
                found: idx.slice(s.start.min(idx.len()), s.end.min(idx.len())).to_string(),
                span_id: s.span_id,
                expected: s.placeholder,
                start: s.start,
                end: s.end,
            });
        }
        self.text = splice_cp(&self.text, s.start, s.end, hypothesis).expect("checked offsets");
        let new_len = cp_len(hypothesis);
        let old_len = s.end - s.start;
        for (j, o) in self.slots.iter_mut().enumerate() {
            if j != i && o.start >= s.end {
                o.start = o.start + new_len - old_len;
                o.end = o.end + new_len - old_len;
            }
        }
        self.slots[i].end = s.start + new_len;
        self.resolved[i] = true;
        Ok(())
    }
}

pub struct InfillOutcome {
    pub document: ReidentifiedDocument,
    pub error: Option<InfillError>,
}

impl InfillOutcome {
    pub fn into_result(self) -> Result<ReidentifiedDocument, InfillError> {
        match self.error {
            None => Ok(self.document),
            Some(e) => Err(e),
        }
    }
}

struct Candidates<'c> {
    chunks: Vec<&'c Chunk>,
    normalized: HashMap<&'c str, &'c str>,
}

/// Runs the fill-in loop over one masked document.
///
/// Spans are filled one at a time in seeded random order; each hypothesis
/// is written into the working text, so later spans see earlier answers.
/// A hard failure stops the loop and returns what was done so far with
/// `complete = false`.
pub fn infill_document(
    md: &MaskedDocument,
    kb: &KnowledgeBase,
    cfg: &InfillConfig,
    backends: &Backends<'_>,
    analyzer: &Analyzer,
) -> InfillOutcome {
    let seed = document_seed(cfg.order_seed, &md.doc_id);
    let schedule = schedule_spans(md, seed);
    let embed_model = backends.retrieval.as_ref().map_or("", |r| r.dense.backend.model_id());
    let mut doc = ReidentifiedDocument {
        doc_id: md.doc_id.clone(),
        final_text: md.masked_text.clone(),
        results: Vec::with_capacity(md.spans.len()),
        config_fingerprint: cfg.fingerprint(&[backends.infiller.model_id(), embed_model]),
        level: kb.level,
        schedule_seed: seed,
        schedule,
        complete: false,
        error: None,
        trace: DocumentTrace::default(),
    };
    let error = run_loop(md, kb, cfg, backends, analyzer, &mut doc).err();
    doc.complete = error.is_none();
    doc.error = error.as_ref().map(|e| e.to_string());
    InfillOutcome { document: doc, error }
}

fn run_loop(
    md: &MaskedDocument,
    kb: &KnowledgeBase,
    cfg: &InfillConfig,
    backends: &Backends<'_>,
    analyzer: &Analyzer,
    doc: &mut ReidentifiedDocument,
) -> Result<(), InfillError> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(InfillError::Config(errs.join("; ")));
    }
    let retrieval = match (cfg.mode, &backends.retrieval) {
        (InfillMode::NoRetrieval, _) => None,
        (InfillMode::Retrieval, _) if !kb.level.uses_retrieval() => {
            return Err(InfillError::Config(format!("{} allows no retrieval", kb.level)))
        }
        (InfillMode::Retrieval, None) => return Err(InfillError::Config("retrieval mode without a retrieval stage".into())),
        (InfillMode::Retrieval, Some(r)) => Some(r),
    };

    let mut candidates = Candidates {
        chunks: Vec::new(),
        normalized: HashMap::new(),
    };
    if let Some(r) = retrieval {
        let hits: Vec<ScoredHit> = r
            .index
            .retrieve_excluding(&md.masked_text, r.top_docs, &kb.excluded)
            .into_iter()
            .filter(|h| kb.contains(&h.target_id))
            .collect();
        doc.trace.retrieval = true;
        let docs: Vec<_> = hits.iter().filter_map(|h| r.chunks.get(&h.target_id)).collect();
        for span in md.spans.iter().filter(|s| s.gold_surface.is_some()) {
            let covered = docs.iter().any(|d| is_positive(&d.doc_normalized, span));
            doc.trace.covered.insert(span.span_id.clone(), covered);
        }
        for d in &docs {
            for (c, n) in d.chunks.iter().zip(&d.normalized) {
                candidates.chunks.push(c);
                candidates.normalized.insert(c.chunk_id.as_str(), n.as_str());
            }
        }
        doc.trace.sparse_hits = hits;
    }

    let mut wd = WorkingDocument::new(md);
    wd.verify()?;
    let schedule = doc.schedule.clone();
    for (order_index, span_id) in schedule.iter().enumerate() {
        let i = wd.position(span_id).expect("scheduled span exists");
        let span = &md.spans[i];
        let unresolved = wd.unresolved();
        let slot = wd.slot(i).clone();
        let context = {
            let idx = CharIndex::new(wd.text());
            render_window(
                &idx,
                &slot,
                &unresolved,
                slot.start.saturating_sub(cfg.context_window_chars),
                slot.end + cfg.context_window_chars,
            )
        };

        let mut passages: Vec<Chunk> = Vec::new();
        if let Some(r) = retrieval.filter(|_| !candidates.chunks.is_empty()) {
            let query = build_query(wd.text(), &slot, &unresolved, analyzer, cfg.token_budget)?;
            let ranking = r.dense.rank_chunks(&query, &candidates.chunks)?;
            let first_relevant_rank = span.gold_surface.as_ref().and_then(|_| {
                ranking
                    .iter()
                    .position(|h| is_positive(candidates.normalized[h.chunk_id.as_str()], span))
                    .map(|p| p + 1)
            });
            let by_id: HashMap<&str, &Chunk> = candidates.chunks.iter().map(|c| (c.chunk_id.as_str(), *c)).collect();
            passages = ranking
                .iter()
                .take(cfg.k_passages)
                .map(|h| by_id[h.chunk_id.as_str()].clone())
                .collect();
            doc.trace.dense.insert(
                span.span_id.clone(),
                DenseTrace {
                    n_candidates: ranking.len(),
                    first_relevant_rank,
                    top_chunks: ranking.iter().take(MAX_PASSAGES).map(|h| h.chunk_id.clone()).collect(),
                },
            );
        }
        let mode = if passages.is_empty() {
            InfillMode::NoRetrieval
        } else {
            InfillMode::Retrieval
        };
        let prompt = render_prompt(&context, &passages, mode)?;
        let request = InfillRequest {
            model: backends.infiller.model_id().to_string(),
            prompt,
            max_tokens: cfg.max_tokens,
            temperature: 0.0,
        };
        let key = request_key(&request);
        let response = match backends.transcripts.get(&key) {
            Some(r) => r,
            None => {
                let r = backends.infiller.infill(&InfillCall {
                    request: request.clone(),
                    span,
                    passages: &passages,
                })?;
                r.validate()?;
                backends.transcripts.record(&key, &request, &r)?;
                r
            }
        };
        let raw = response.top().to_string();
        let hypothesis = postprocess_hypothesis(&raw, &[span.placeholder.as_str()]);
        wd.substitute(i, &hypothesis)?;
        wd.verify()?;
        doc.final_text = wd.text().to_string();
        doc.results.push(InfillResult {
            span_id: span.span_id.clone(),
            hypothesis,
            passages_used: passages.iter().map(|p| p.chunk_id.clone()).collect(),
            order_index,
            raw_backend_output: raw,
            transcript_key: key,
        });
    }
    doc.final_text = wd.into_text();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{IdentifierClass, MaskedSpan};

    fn md(text: &str, spans: &[(&str, usize, usize)]) -> MaskedDocument {
        MaskedDocument {
            doc_id: "d".into(),
            masked_text: text.into(),
            dataset: None,
            identity: None,
            spans: spans
                .iter()
                .map(|&(id, s, e)| MaskedSpan {
                    span_id: id.into(),
                    start: s,
                    end: e,
                    placeholder: "[MASK]".into(),
                    category: "X".into(),
                    identifier_class: IdentifierClass::Unknown,
                    gold_surface: None,
                    gold_variants: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn substitution_shifts_later_offsets() {
        let m = md("[MASK] met [MASK] in [MASK].", &[("a", 0, 6), ("b", 11, 17), ("c", 21, 27)]);
        let mut wd = WorkingDocument::new(&m);
        wd.substitute(1, "Émile Zola").unwrap();
        wd.verify().unwrap();
        wd.substitute(2, "Łódź").unwrap();
        wd.verify().unwrap();
        wd.substitute(0, "I").unwrap();
        assert_eq!(wd.text(), "I met Émile Zola in Łódź.");
        assert!(wd.unresolved().is_empty());
        assert!(matches!(wd.substitute(0, "x"), Err(InfillError::OffsetDesync { .. })));
    }

    #[test]
    fn config_rules() {
        assert!(InfillConfig::no_retrieval(1).validate().is_empty());
        assert!(InfillConfig::preset(InfillPreset::Mistral10, 1).validate().is_empty());
        let mut bad = InfillConfig::no_retrieval(1);
        bad.k_passages = 2;
        assert_eq!(bad.validate().len(), 1);
        assert_eq!(InfillPreset::Glm2.k_passages(), 2);
        assert_eq!("MISTRAL10".parse::<InfillPreset>().unwrap(), InfillPreset::Mistral10);
        assert_ne!(
            InfillConfig::preset(InfillPreset::Glm1, 1).fingerprint(&[]),
            InfillConfig::preset(InfillPreset::Glm1, 2).fingerprint(&[])
        );
    }
}
