//! Versioned TOML run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backend::{HttpConfig, RetryPolicy};
use crate::chunk_query::{ChunkConfig, DEFAULT_TOKEN_BUDGET};
use crate::corpus::{KnowledgeLevel, DEFAULT_PLACEHOLDER};
use crate::dense::{DEFAULT_BATCH, DEFAULT_DIM};
use crate::infill::{InfillConfig, InfillMode, InfillPreset, DEFAULT_CONTEXT_WINDOW, DEFAULT_MAX_TOKENS, MAX_PASSAGES};
use crate::sparse::{ScoringParams, DEFAULT_B, DEFAULT_K1, DEFAULT_TOP_DOCS};

pub const CONFIG_VERSION: u32 = 1;

/// Every problem found in a config file.
#[derive(Debug, thiserror::Error)]
#[error("invalid configuration:\n  - {}", errors.join("\n  - "))]
pub struct ConfigError {
    pub errors: Vec<String>,
}

impl ConfigError {
    fn one(e: impl Into<String>) -> Self {
        Self { errors: vec![e.into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub paths: Vec<PathBuf>,
    pub format: String,
    pub placeholder: String,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            paths: Vec::new(),
            format: "jsonl".into(),
            placeholder: DEFAULT_PLACEHOLDER.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparseSection {
    pub n_docs: usize,
    pub strategy: String,
    pub k1: f64,
    pub b: f64,
}

impl Default for SparseSection {
    fn default() -> Self {
        Self {
            n_docs: DEFAULT_TOP_DOCS,
            strategy: "bm25".into(),
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

impl SparseSection {
    pub fn params(&self) -> ScoringParams {
        ScoringParams {
            strategy: self.strategy.clone(),
            k1: self.k1,
            b: self.b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenseSection {
    /// Passages handed to the infiller; the preset's count when unset.
    pub k: Option<usize>,
    pub model_id: String,
    pub endpoint: Option<String>,
    pub dim: usize,
    pub token_budget: usize,
    pub batch_size: usize,
    pub cache_budget_mb: usize,
}

impl Default for DenseSection {
    fn default() -> Self {
        Self {
            k: None,
            model_id: "colbert".into(),
            endpoint: None,
            dim: DEFAULT_DIM,
            token_budget: DEFAULT_TOKEN_BUDGET,
            batch_size: DEFAULT_BATCH,
            cache_budget_mb: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfillSection {
    pub preset: InfillPreset,
    pub window: usize,
    pub seed: u64,
    pub model_id: String,
    pub endpoint: Option<String>,
    pub max_tokens: u32,
}

impl Default for InfillSection {
    fn default() -> Self {
        Self {
            preset: InfillPreset::Glm1,
            window: DEFAULT_CONTEXT_WINDOW,
            seed: 0,
            model_id: "infiller".into(),
            endpoint: None,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankerMode {
    None,
    Lexical,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankerSection {
    pub mode: RankerMode,
    pub model_id: String,
    pub endpoint: Option<String>,
    /// Extra identities file (one per line); dataset identities are used otherwise.
    pub candidates: Option<PathBuf>,
}

impl Default for RankerSection {
    fn default() -> Self {
        Self {
            mode: RankerMode::Lexical,
            model_id: "ranker".into(),
            endpoint: None,
            candidates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub auth_header: Option<String>,
    pub auth_token_env: Option<String>,
    pub max_in_flight: usize,
}

impl Default for BackendSection {
    fn default() -> Self {
        let r = RetryPolicy::default();
        Self {
            timeout_ms: 60_000,
            max_retries: r.max_retries,
            initial_backoff_ms: r.initial_backoff_ms,
            max_backoff_ms: r.max_backoff_ms,
            auth_header: None,
            auth_token_env: None,
            max_in_flight: 8,
        }
    }
}

impl BackendSection {
    pub fn http(&self, endpoint: &str) -> HttpConfig {
        HttpConfig {
            endpoint: endpoint.to_string(),
            timeout_ms: self.timeout_ms,
            retry: RetryPolicy {
                max_retries: self.max_retries,
                initial_backoff_ms: self.initial_backoff_ms,
                max_backoff_ms: self.max_backoff_ms,
            },
            auth_header: self.auth_header.clone(),
            auth_token_env: self.auth_token_env.clone(),
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Score against the gold surface only, ignoring variants.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    pub level: KnowledgeLevel,
    pub output_dir: PathBuf,
    pub concurrency: usize,
    /// Use the in-process deterministic backends.
    pub mock: bool,
    pub corpus: CorpusSection,
    pub sparse: SparseSection,
    pub chunk: ChunkConfig,
    pub dense: DenseSection,
    pub infill: InfillSection,
    pub ranker: RankerSection,
    pub backend: BackendSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            level: KnowledgeLevel::L4,
            output_dir: PathBuf::from("runs"),
            concurrency: 4,
            mock: false,
            corpus: CorpusSection::default(),
            sparse: SparseSection::default(),
            chunk: ChunkConfig::default(),
            dense: DenseSection::default(),
            infill: InfillSection::default(),
            ranker: RankerSection::default(),
            backend: BackendSection::default(),
            eval: EvalSection::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "version", "level", "output_dir", "concurrency", "mock", "corpus", "sparse", "chunk", "dense", "infill", "ranker",
    "backend", "eval",
];

fn field<T: DeserializeOwned>(table: &toml::Table, key: &str, errs: &mut Vec<String>, slot: &mut T) {
    if let Some(v) = table.get(key) {
        match v.clone().try_into::<T>() {
            Ok(x) => *slot = x,
            Err(e) => errs.push(format!("`{key}`: {}", e.to_string().trim())),
        }
    }
}

impl RunConfig {
    /// Parses and validates, reporting every problem at once. Relative paths
    /// are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::one(format!("TOML syntax: {}", e.to_string().trim())))?;
        let mut errs = Vec::new();
        for k in table.keys() {
            if !KEYS.contains(&k.as_str()) {
                errs.push(format!("unknown key `{k}`"));
            }
        }
        let mut cfg = RunConfig::default();
        match table.get("version").and_then(toml::Value::as_integer) {
            Some(v) if v == i64::from(CONFIG_VERSION) => {}
            Some(v) => errs.push(format!("`version`: unsupported config version {v} (expected {CONFIG_VERSION})")),
            None => errs.push("`version`: missing or not an integer".into()),
        }
        if let Some(v) = table.get("level") {
            match v.as_str().map(str::parse::<KnowledgeLevel>) {
                Some(Ok(l)) => cfg.level = l,
                _ => errs.push(format!("`level`: expected one of L1, L2, L3, L4, got {v}")),
            }
        }
        field(&table, "output_dir", &mut errs, &mut cfg.output_dir);
        field(&table, "concurrency", &mut errs, &mut cfg.concurrency);
        field(&table, "mock", &mut errs, &mut cfg.mock);
        field(&table, "corpus", &mut errs, &mut cfg.corpus);
        field(&table, "sparse", &mut errs, &mut cfg.sparse);
        field(&table, "chunk", &mut errs, &mut cfg.chunk);
        field(&table, "dense", &mut errs, &mut cfg.dense);
        field(&table, "infill", &mut errs, &mut cfg.infill);
        field(&table, "ranker", &mut errs, &mut cfg.ranker);
        field(&table, "backend", &mut errs, &mut cfg.backend);
        field(&table, "eval", &mut errs, &mut cfg.eval);
        cfg.resolve_paths(base_dir);
        errs.extend(cfg.problems());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError { errors: errs })
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::one(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpus.paths.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
        if let Some(p) = &mut self.ranker.candidates {
            fix(p);
        }
    }

    /// Semantic checks beyond parsing.
    pub fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.corpus.paths.is_empty() {
            errs.push("`corpus.paths`: at least one corpus file is required".into());
        }
        if self.corpus.format != "jsonl" {
            errs.push(format!("`corpus.format`: unsupported format `{}`", self.corpus.format));
        }
        if self.corpus.placeholder.is_empty() {
            errs.push("`corpus.placeholder`: must not be empty".into());
        }
        if self.concurrency == 0 {
            errs.push("`concurrency`: must be at least 1".into());
        }
        if self.sparse.n_docs == 0 {
            errs.push("`sparse.n_docs`: must be at least 1".into());
        }
        if self.sparse.strategy != "bm25" {
            errs.push(format!("`sparse.strategy`: unknown strategy `{}`", self.sparse.strategy));
        }
        if !(self.sparse.k1.is_finite() && self.sparse.k1 >= 0.0) {
            errs.push("`sparse.k1`: must be a non-negative number".into());
        }
        if !(0.0..=1.0).contains(&self.sparse.b) {
            errs.push("`sparse.b`: must lie in [0, 1]".into());
        }
        if let Err(e) = self.chunk.validate() {
            errs.push(format!("`chunk`: {e}"));
        }
        if let Some(k) = self.dense.k {
            if self.level.uses_retrieval() && !(1..=MAX_PASSAGES).contains(&k) {
                errs.push(format!("`dense.k`: must lie in 1..={MAX_PASSAGES}, got {k}"));
            }
        }
        if self.dense.dim == 0 {
            errs.push("`dense.dim`: must be at least 1".into());
        }
        if self.dense.token_budget == 0 {
            errs.push("`dense.token_budget`: must be at least 1".into());
        }
        if self.dense.batch_size == 0 {
            errs.push("`dense.batch_size`: must be at least 1".into());
        }
        if self.infill.max_tokens == 0 {
            errs.push("`infill.max_tokens`: must be at least 1".into());
        }
        if !self.mock {
            if self.infill.endpoint.is_none() {
                errs.push("`infill.endpoint`: required unless `mock = true`".into());
            }
            if self.level.uses_retrieval() && self.dense.endpoint.is_none() {
                errs.push("`dense.endpoint`: required for retrieval levels unless `mock = true`".into());
            }
        }
        if self.ranker.mode == RankerMode::Remote && self.ranker.endpoint.is_none() {
            errs.push("`ranker.endpoint`: required when `ranker.mode = \"remote\"`".into());
        }
        if self.backend.auth_header.is_some() != self.backend.auth_token_env.is_some() {
            errs.push("`backend.auth_header` and `backend.auth_token_env` must be set together".into());
        }
        if self.backend.max_in_flight == 0 {
            errs.push("`backend.max_in_flight`: must be at least 1".into());
        }
        errs
    }

    /// Passages per span after applying the level rule.
    pub fn k_passages(&self) -> usize {
        if self.level.uses_retrieval() {
            self.dense.k.unwrap_or(self.infill.preset.k_passages())
        } else {
            0
        }
    }

    /// The infill loop settings; L1 always runs without retrieval.
    pub fn infill_config(&self) -> InfillConfig {
        let k = self.k_passages();
        InfillConfig {
            k_passages: k,
            context_window_chars: self.infill.window,
            order_seed: self.infill.seed,
            mode: if k == 0 { InfillMode::NoRetrieval } else { InfillMode::Retrieval },
            token_budget: self.dense.token_budget,
            max_tokens: self.infill.max_tokens,
        }
    }

    /// Run directory for the configured level.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.level.to_string())
    }
}
