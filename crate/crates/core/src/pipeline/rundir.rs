use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, PipelineError};
use crate::config::RunConfig;
use crate::corpus::{Dataset, KnowledgeLevel, StoreManifest};
use crate::infill::{InfillConfig, ReidentifiedDocument};
use crate::ranker::RankedIdentities;
use crate::sparse::IndexManifest;

pub const RUN_FORMAT: &str = "reident-run";
const RUN_VERSION: u32 = 1;

/// Layout of one level's run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn lock(&self) -> PathBuf {
        self.root.join("run.lock")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn transcripts(&self) -> PathBuf {
        self.root.join("transcripts.jsonl")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings.remb")
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    /// File for one document; ids are sanitized and suffixed with a hash so
    /// distinct ids never collide.
    pub fn result_path(&self, doc_id: &str) -> PathBuf {
        let safe: String = doc_id
            .chars()
            .take(64)
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let h = hex::encode(Sha256::digest(doc_id.as_bytes()));
        self.results().join(format!("{safe}-{}.json", &h[..8]))
    }

    pub fn read_manifest(&self) -> Result<Option<RunManifest>, PipelineError> {
        let p = self.manifest();
        if !p.exists() {
            return Ok(None);
        }
        let raw = fs::read(&p).map_err(io_err(&p))?;
        serde_json::from_slice(&raw)
            .map(Some)
            .map_err(|source| PipelineError::Json { path: p, source })
    }

    pub fn write_manifest(&self, m: &RunManifest) -> Result<(), PipelineError> {
        write_json_atomic(&self.manifest(), m)
    }
}

/// Exclusive lock on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &RunDir) -> Result<Self, PipelineError> {
        let path = dir.lock();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(dir.root.clone())),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelIds {
    pub infill: String,
    pub embed: Option<String>,
    pub ranker: Option<String>,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    /// Hash over every setting that shapes outputs; resume requires a match.
    pub run_fingerprint: String,
    pub level: KnowledgeLevel,
    pub order_seed: u64,
    pub infill: InfillConfig,
    pub models: ModelIds,
    pub corpus: StoreManifest,
    pub index: Option<IndexManifest>,
    pub config: RunConfig,
    pub targets: Vec<String>,
    pub completed: usize,
    pub complete: bool,
}

impl RunManifest {
    pub fn new(
        config: &RunConfig,
        run_fingerprint: String,
        models: ModelIds,
        corpus: StoreManifest,
        index: Option<IndexManifest>,
        targets: Vec<String>,
    ) -> Self {
        let infill = config.infill_config();
        Self {
            format: RUN_FORMAT.into(),
            version: RUN_VERSION,
            run_fingerprint,
            level: config.level,
            order_seed: infill.order_seed,
            infill,
            models,
            corpus,
            index,
            config: config.clone(),
            targets,
            completed: 0,
            complete: false,
        }
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("manifest serializes")))
    }
}

/// The persisted outcome for one attacked document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub dataset: Dataset,
    pub gold_identity: Option<String>,
    pub document: ReidentifiedDocument,
    pub ranking: Option<RankedIdentities>,
}

pub(crate) fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut data = serde_json::to_vec_pretty(value).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    data.push(b'\n');
    write_atomic(path, &data)
}

pub(crate) fn write_atomic(path: &Path, data: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, data).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Every result record in a run directory, ordered by document id.
pub fn read_records(dir: &RunDir) -> Result<Vec<DocumentRecord>, PipelineError> {
    let results = dir.results();
    let mut out = Vec::new();
    if !results.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(&results).map_err(io_err(&results))? {
        let p = entry.map_err(io_err(&results))?.path();
        if p.extension().is_some_and(|e| e == "json") {
            let raw = fs::read(&p).map_err(io_err(&p))?;
            let rec: DocumentRecord =
                serde_json::from_slice(&raw).map_err(|source| PipelineError::Json { path: p.clone(), source })?;
            out.push(rec);
        }
    }
    out.sort_by(|a, b| a.document.doc_id.cmp(&b.document.doc_id));
    Ok(out)
}

pub(crate) fn read_record(path: &Path) -> Option<DocumentRecord> {
    let raw = fs::read(path).ok()?;
    serde_json::from_slice(&raw).ok()
}
