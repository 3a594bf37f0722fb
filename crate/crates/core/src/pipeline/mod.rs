//! Run orchestration: run directories, manifests, resume and replay, and
//! the `index` / `attack` / `eval` / `export-pairs` commands.

mod attack;
mod eval;
mod rundir;

pub use attack::{cmd_attack, cmd_export_pairs, cmd_index, replay_from_manifest, AttackSummary, IndexSummary, ReplayReport};
pub use eval::{cmd_eval, evaluate_records};
pub use rundir::{read_records, DocumentRecord, ModelIds, RunDir, RunLock, RunManifest, RUN_FORMAT};

use std::path::PathBuf;
use std::sync::Arc;

use crate::backend::mock::{HashEmbedder, OracleInfiller};
use crate::backend::{BackendError, EmbeddingBackend, HttpBackend, HttpEmbedder, HttpInfiller, HttpRanker, InfillBackend, RankBackend};
use crate::config::{ConfigError, RankerMode, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Index(#[from] crate::sparse::IndexError),
    #[error(transparent)]
    Chunk(#[from] crate::chunk_query::ChunkError),
    #[error(transparent)]
    Pairs(#[from] crate::chunk_query::pairs::PairError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("document `{doc_id}`: {source}")]
    Infill {
        doc_id: String,
        #[source]
        source: crate::infill::InfillError,
    },
    #[error("document `{doc_id}`: {source}")]
    Rank {
        doc_id: String,
        #[source]
        source: crate::ranker::RankError,
    },
    #[error(transparent)]
    Eval(#[from] crate::metrics::EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("run directory {0} is locked by another process (remove the lock file if it is stale)")]
    Locked(PathBuf),
    #[error("run directory {dir} belongs to a different run: {reason}")]
    ManifestMismatch { dir: PathBuf, reason: String },
    #[error("{} of {total} documents incomplete (first: {first}); rerun to resume", failed.len())]
    Incomplete {
        failed: Vec<String>,
        total: usize,
        first: String,
    },
    #[error("skipped after an earlier hard failure")]
    Aborted,
    #[error("{0}")]
    Invalid(String),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}

/// The model backends a run talks to.
#[derive(Clone)]
pub struct BackendSet {
    pub infiller: Arc<dyn InfillBackend>,
    pub embedder: Option<Arc<dyn EmbeddingBackend>>,
    /// Only for `ranker.mode = "remote"`.
    pub ranker: Option<Arc<dyn RankBackend>>,
}

impl BackendSet {
    /// In-process deterministic backends.
    pub fn mock(cfg: &RunConfig) -> Self {
        Self {
            infiller: Arc::new(OracleInfiller::new()),
            embedder: Some(Arc::new(HashEmbedder::new(cfg.dense.dim))),
            ranker: None,
        }
    }

    /// HTTP clients for the configured endpoints, or mocks when `cfg.mock`.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, PipelineError> {
        if cfg.mock {
            return Ok(Self::mock(cfg));
        }
        let endpoint = |e: &Option<String>, what: &str| {
            e.clone()
                .ok_or_else(|| PipelineError::Invalid(format!("no endpoint configured for {what}")))
        };
        let infiller = HttpInfiller {
            http: HttpBackend::new(&cfg.backend.http(&endpoint(&cfg.infill.endpoint, "infill")?))?,
            model: cfg.infill.model_id.clone(),
        };
        let embedder: Option<Arc<dyn EmbeddingBackend>> = if cfg.level.uses_retrieval() {
            Some(Arc::new(HttpEmbedder {
                http: HttpBackend::new(&cfg.backend.http(&endpoint(&cfg.dense.endpoint, "dense")?))?,
                model: cfg.dense.model_id.clone(),
                dim: Some(cfg.dense.dim),
            }))
        } else {
            None
        };
        let ranker: Option<Arc<dyn RankBackend>> = match cfg.ranker.mode {
            RankerMode::Remote => Some(Arc::new(HttpRanker {
                http: HttpBackend::new(&cfg.backend.http(&endpoint(&cfg.ranker.endpoint, "ranker")?))?,
                model: cfg.ranker.model_id.clone(),
            })),
            _ => None,
        };
        Ok(Self {
            infiller: Arc::new(infiller),
            embedder,
            ranker,
        })
    }
}
