//! Deterministic in-process backends for offline runs and tests.

use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use super::{
    BackendError, EmbedResponse, EmbeddingBackend, InfillBackend, InfillCall, InfillCandidate, InfillResponse,
};
use crate::analyzer::{self, Analyzer};

pub const MOCK_EMBED_MODEL: &str = "mock-hash-embed-v1";
pub const MOCK_INFILL_MODEL: &str = "mock-passage-copy-v1";

fn seed_of(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Token embeddings derived from a hash of each analyzer token, so equal
/// tokens get equal vectors and late-interaction scores track lexical overlap.
#[derive(Debug)]
pub struct HashEmbedder {
    model: String,
    dim: usize,
    analyzer: Analyzer,
    calls: AtomicUsize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            model: MOCK_EMBED_MODEL.into(),
            dim,
            analyzer: Analyzer::default(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Unnormalized vector for one token.
    pub fn token_vector(&self, term: &str) -> Vec<f32> {
        let mut state = seed_of(&[self.model.as_bytes(), term.as_bytes()]);
        (0..self.dim)
            .map(|_| {
                let u = (splitmix(&mut state) >> 11) as f64 / (1u64 << 53) as f64;
                (2.0 * u - 1.0) as f32
            })
            .collect()
    }

    pub fn embed_text(&self, text: &str) -> Vec<Vec<f32>> {
        let toks = self.analyzer.tokens(text);
        if toks.is_empty() {
            return vec![self.token_vector("\u{0}empty")];
        }
        toks.iter().map(|t| self.token_vector(&t.term)).collect()
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<EmbedResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(EmbedResponse {
            model: self.model.clone(),
            dim: self.dim,
            embeddings: texts.iter().map(|t| self.embed_text(t)).collect(),
        })
    }
}

const GUESS_WORDS: &[&str] = &[
    "unknown", "someone", "somewhere", "several", "the", "local", "court", "council", "northern", "region",
];

/// Copies the span's gold surface when any provided passage contains a gold
/// form; otherwise answers with a prompt-derived guess of 1 to 4 words.
#[derive(Debug)]
pub struct OracleInfiller {
    model: String,
    calls: AtomicUsize,
    fail_after: Option<usize>,
}

impl Default for OracleInfiller {
    fn default() -> Self {
        Self {
            model: MOCK_INFILL_MODEL.into(),
            calls: AtomicUsize::new(0),
            fail_after: None,
        }
    }
}

impl OracleInfiller {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fails every call after the first `n` successful ones.
    pub fn failing_after(n: usize) -> Self {
        Self {
            fail_after: Some(n),
            ..Self::default()
        }
    }

    /// Successful calls so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn guess(prompt: &str) -> String {
        let mut state = seed_of(&[b"guess", prompt.as_bytes()]);
        let n = 1 + (splitmix(&mut state) % 4) as usize;
        (0..n)
            .map(|_| GUESS_WORDS[(splitmix(&mut state) % GUESS_WORDS.len() as u64) as usize])
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl InfillBackend for OracleInfiller {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn infill(&self, call: &InfillCall<'_>) -> Result<InfillResponse, BackendError> {
        if let Some(limit) = self.fail_after {
            if self.calls.load(Ordering::SeqCst) >= limit {
                return Err(BackendError::Protocol("mock backend switched off".into()));
            }
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let found = call.span.gold_surface.as_ref().filter(|_| {
            call.passages.iter().any(|p| {
                let norm = analyzer::normalized(&p.text);
                call.span.gold_forms().any(|g| analyzer::contains_terms(&norm, g))
            })
        });
        let text = match found {
            Some(gold) => gold.clone(),
            None => Self::guess(&call.request.prompt),
        };
        Ok(InfillResponse {
            candidates: vec![InfillCandidate { text, score: None }],
        })
    }
}
