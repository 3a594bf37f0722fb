//! Model backends: wire types for `/embed`, `/infill` and `/rank`, the
//! traits the pipeline calls, an HTTP client, and deterministic mocks.

mod http;
pub mod mock;

pub use http::{HttpBackend, HttpConfig, HttpEmbedder, HttpInfiller, HttpRanker};

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::chunk_query::Chunk;
use crate::corpus::MaskedSpan;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {message}")]
    Transport { message: String, transient: bool },
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("backend response violates the wire contract: {0}")]
    Protocol(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("giving up after {attempts} attempts: {last}")]
    Exhausted {
        attempts: u32,
        #[source]
        last: Box<BackendError>,
    },
}

impl BackendError {
    /// Whether a retry might succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport { transient, .. } => *transient,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            BackendError::Unavailable(_) => true,
            BackendError::Protocol(_) | BackendError::Exhausted { .. } => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 200,
            max_backoff_ms: 5_000,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            initial_backoff_ms: 0,
            max_backoff_ms: 0,
        }
    }

    /// Runs `op`, retrying transient failures with exponential backoff.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut backoff = self.initial_backoff_ms;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt <= self.max_retries => {
                    log::warn!("backend attempt {attempt} failed, retrying: {e}");
                    if backoff > 0 {
                        std::thread::sleep(Duration::from_millis(backoff));
                    }
                    backoff = (backoff * 2).min(self.max_backoff_ms);
                }
                Err(e) if attempt > 1 => {
                    return Err(BackendError::Exhausted {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    pub texts: Vec<String>,
}

/// Token-level embeddings: `embeddings[i]` holds one row per token of `texts[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub model: String,
    pub dim: usize,
    pub embeddings: Vec<Vec<Vec<f32>>>,
}

impl EmbedResponse {
    /// Structural checks against the request that produced it.
    pub fn validate(&self, n_texts: usize, expected_dim: Option<usize>) -> Result<(), BackendError> {
        if self.embeddings.len() != n_texts {
            return Err(BackendError::Protocol(format!(
                "/embed returned {} embeddings for {n_texts} texts",
                self.embeddings.len()
            )));
        }
        if let Some(d) = expected_dim.filter(|&d| d != self.dim) {
            return Err(BackendError::Protocol(format!("/embed dim {} but {d} expected", self.dim)));
        }
        for (i, rows) in self.embeddings.iter().enumerate() {
            if rows.is_empty() {
                return Err(BackendError::Protocol(format!("/embed text {i} has no token rows")));
            }
            if let Some(r) = rows.iter().find(|r| r.len() != self.dim) {
                return Err(BackendError::Protocol(format!(
                    "/embed text {i} has a row of length {} (dim {})",
                    r.len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillCandidate {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillResponse {
    pub candidates: Vec<InfillCandidate>,
}

impl InfillResponse {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.candidates.is_empty() {
            return Err(BackendError::Protocol("/infill returned no candidates".into()));
        }
        Ok(())
    }

    /// The backend's top candidate.
    pub fn top(&self) -> &str {
        self.candidates.first().map_or("", |c| c.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRequest {
    pub model: String,
    pub text: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResponse {
    pub scores: Vec<f64>,
}

impl RankResponse {
    pub fn validate(&self, n_candidates: usize) -> Result<(), BackendError> {
        if self.scores.len() != n_candidates {
            return Err(BackendError::Protocol(format!(
                "/rank returned {} scores for {n_candidates} candidates",
                self.scores.len()
            )));
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(BackendError::Protocol("/rank returned a non-finite score".into()));
        }
        Ok(())
    }
}

/// Capabilities a model service advertises at `GET /manifest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendManifest {
    pub version: String,
    /// Model id per endpoint name (`embed`, `infill`, `rank`).
    pub models: std::collections::BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_prompt_length: Option<usize>,
}

pub trait EmbeddingBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<EmbedResponse, BackendError>;
}

/// One infilling exchange. `request` is what goes on the wire; `span` and
/// `passages` let in-process backends see what the prompt was built from.
#[derive(Debug, Clone)]
pub struct InfillCall<'a> {
    pub request: InfillRequest,
    pub span: &'a MaskedSpan,
    pub passages: &'a [Chunk],
}

pub trait InfillBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn infill(&self, call: &InfillCall<'_>) -> Result<InfillResponse, BackendError>;
}

pub trait RankBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn rank(&self, request: &RankRequest) -> Result<RankResponse, BackendError>;
}
