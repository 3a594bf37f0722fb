use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::rundir::{read_record, write_json_atomic};
use super::{io_err, BackendSet, DocumentRecord, ModelIds, PipelineError, RunDir, RunLock, RunManifest};
use crate::analyzer::Analyzer;
use crate::backend::{BackendError, EmbedResponse, EmbeddingBackend, InfillBackend, InfillCall, InfillResponse};
use crate::chunk_query::pairs::ExportStats;
use crate::chunk_query::{export_retriever_pairs, ChunkStore, PairSampleSpec};
use crate::config::{RankerMode, RunConfig};
use crate::corpus::{Corpus, CorpusFormat, Dataset, IngestOptions, LevelSets, StoreManifest};
use crate::dense::{DenseScorer, EmbeddingCache};
use crate::infill::{infill_document, Backends, InfillMode, RetrievalStage, TranscriptCache};
use crate::ranker::{rank_identities, CandidateList, CandidateSource, IdentityScorer, LexicalScorer, RemoteScorer};
use crate::sparse::{IndexManifest, InvertedIndex};

fn load_corpus(cfg: &RunConfig) -> Result<Corpus, PipelineError> {
    let format: CorpusFormat = cfg.corpus.format.parse()?;
    Ok(Corpus::ingest(
        &cfg.corpus.paths,
        format,
        &IngestOptions {
            placeholder: cfg.corpus.placeholder.clone(),
        },
    )?)
}

/// Index and chunks for the configured level, when it retrieves at all.
struct Prepared {
    analyzer: Analyzer,
    levels: LevelSets,
    index: Option<InvertedIndex>,
    chunks: Option<ChunkStore>,
}

fn prepare(cfg: &RunConfig, corpus: &Corpus) -> Result<Prepared, PipelineError> {
    let analyzer = Analyzer::default().with_placeholder(&cfg.corpus.placeholder);
    let levels = LevelSets::new(corpus);
    let (index, chunks) = if cfg.infill_config().mode == InfillMode::Retrieval {
        let universe = levels.universe(cfg.level);
        if universe.is_empty() {
            return Err(PipelineError::Invalid(format!(
                "{} needs background documents but the corpus has none for it",
                cfg.level
            )));
        }
        let texts: Vec<(&str, &str)> = universe
            .iter()
            .filter_map(|id| corpus.document(id).map(|d| (id.as_str(), d.text.as_str())))
            .collect();
        let index = InvertedIndex::from_texts(texts, &analyzer, &cfg.sparse.params())?;
        let chunks = ChunkStore::build(corpus, universe.iter(), &cfg.chunk)?;
        (Some(index), Some(chunks))
    } else {
        (None, None)
    };
    Ok(Prepared {
        analyzer,
        levels,
        index,
        chunks,
    })
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    level: String,
    infill: crate::infill::InfillConfig,
    sparse: &'a crate::config::SparseSection,
    chunk: &'a crate::chunk_query::ChunkConfig,
    dim: usize,
    ranker: RankerMode,
    candidates: &'a Option<PathBuf>,
    strict: bool,
    models: &'a ModelIds,
    corpus_hash: &'a str,
}

fn run_fingerprint(cfg: &RunConfig, models: &ModelIds, corpus_hash: &str) -> String {
    let input = FingerprintInput {
        level: cfg.level.to_string(),
        infill: cfg.infill_config(),
        sparse: &cfg.sparse,
        chunk: &cfg.chunk,
        dim: cfg.dense.dim,
        ranker: cfg.ranker.mode,
        candidates: &cfg.ranker.candidates,
        strict: cfg.eval.strict,
        models,
        corpus_hash,
    };
    hex::encode(Sha256::digest(serde_json::to_vec(&input).expect("serializes")))
}

fn model_ids(cfg: &RunConfig, b: &BackendSet) -> ModelIds {
    let retrieval = cfg.infill_config().mode == InfillMode::Retrieval;
    ModelIds {
        infill: b.infiller.model_id().to_string(),
        embed: b.embedder.as_ref().filter(|_| retrieval).map(|e| e.model_id().to_string()),
        ranker: match (cfg.ranker.mode, &b.ranker) {
            (RankerMode::None, _) => None,
            (RankerMode::Remote, Some(r)) => Some(r.model_id().to_string()),
            _ => Some("lexical".into()),
        },
    }
}

/// Candidate identities per dataset: the configured file, or every identity
/// the corpus attaches to masked documents of that dataset.
fn candidate_lists(cfg: &RunConfig, corpus: &Corpus) -> Result<BTreeMap<Dataset, CandidateList>, PipelineError> {
    let mut out = BTreeMap::new();
    if let Some(p) = &cfg.ranker.candidates {
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        let mut names: Vec<String> = Vec::new();
        for l in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if !names.iter().any(|n| n == l) {
                names.push(l.to_string());
            }
        }
        let list = CandidateList::new(names, CandidateSource::UserSupplied).map_err(|source| PipelineError::Rank {
            doc_id: p.display().to_string(),
            source,
        })?;
        for md in corpus.masked_documents() {
            out.insert(corpus.dataset_of(&md.doc_id), list.clone());
        }
        return Ok(out);
    }
    let mut ids: BTreeMap<Dataset, Vec<&str>> = BTreeMap::new();
    for md in corpus.masked_documents() {
        if let Some(i) = &md.identity {
            ids.entry(corpus.dataset_of(&md.doc_id)).or_default().push(i);
        }
    }
    for (ds, names) in ids {
        let list = CandidateList::from_identities(names).map_err(|source| PipelineError::Rank {
            doc_id: ds.to_string(),
            source,
        })?;
        out.insert(ds, list);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSummary {
    pub run_dir: PathBuf,
    pub targets: usize,
    pub processed: usize,
    pub resumed: usize,
    pub manifest_hash: String,
}

/// Attacks every masked document at the configured level.
///
/// Completed result files from an earlier, interrupted run with the same
/// fingerprint are kept; already-answered prompts are served from the
/// transcript log. On a hard backend failure outstanding work stops, partial
/// results are written, and [`PipelineError::Incomplete`] is returned.
pub fn cmd_attack(cfg: &RunConfig, backends: &BackendSet) -> Result<AttackSummary, PipelineError> {
    let errs = cfg.problems();
    if !errs.is_empty() {
        return Err(crate::config::ConfigError { errors: errs }.into());
    }
    let corpus = load_corpus(cfg)?;
    let dir = RunDir::new(cfg.run_dir());
    fs::create_dir_all(dir.results()).map_err(io_err(dir.results()))?;
    let _lock = RunLock::acquire(&dir)?;
    let prepared = prepare(cfg, &corpus)?;
    let models = model_ids(cfg, backends);
    let fingerprint = run_fingerprint(cfg, &models, &corpus.content_hash());
    let targets: Vec<String> = corpus.masked_documents().map(|m| m.doc_id.clone()).collect();

    let mut manifest = match dir.read_manifest()? {
        Some(m) if m.run_fingerprint != fingerprint => {
            return Err(PipelineError::ManifestMismatch {
                dir: dir.root.clone(),
                reason: "settings, models or corpus differ from the recorded run".into(),
            })
        }
        Some(m) => m,
        None => {
            let store = corpus.persist(&dir.corpus())?;
            let m = RunManifest::new(
                cfg,
                fingerprint,
                models,
                store,
                prepared.index.as_ref().map(InvertedIndex::manifest),
                targets.clone(),
            );
            dir.write_manifest(&m)?;
            m
        }
    };

    let done = |id: &String| read_record(&dir.result_path(id)).is_some_and(|r| r.document.complete);
    let pending: Vec<&String> = targets.iter().filter(|id| !done(id)).collect();
    let resumed = targets.len() - pending.len();
    log::info!("{}: {} targets, {} already complete", dir.root.display(), targets.len(), resumed);

    let transcripts = TranscriptCache::open(&dir.transcripts()).map_err(io_err(dir.transcripts()))?;
    let cache = EmbeddingCache::open(&dir.embeddings(), cfg.dense.cache_budget_mb << 20).map_err(io_err(dir.embeddings()))?;
    let candidates = candidate_lists(cfg, &corpus)?;
    let lexical = LexicalScorer;
    let remote = backends.ranker.as_deref().map(RemoteScorer);
    let scorer: Option<&dyn IdentityScorer> = match cfg.ranker.mode {
        RankerMode::None => None,
        RankerMode::Remote if remote.is_some() => remote.as_ref().map(|r| r as &dyn IdentityScorer),
        _ => Some(&lexical),
    };

    let infill_cfg = cfg.infill_config();
    let retrieval_embedder = match (infill_cfg.mode, &backends.embedder) {
        (InfillMode::Retrieval, None) => {
            return Err(PipelineError::Invalid("retrieval level but no embedding backend".into()))
        }
        (InfillMode::Retrieval, Some(e)) => Some(e.as_ref()),
        _ => None,
    };
    let abort = AtomicBool::new(false);

    let process = |doc_id: &String| -> Result<(), PipelineError> {
        if abort.load(Ordering::SeqCst) {
            return Err(PipelineError::Aborted);
        }
        let md = corpus.masked(doc_id).expect("target exists");
        let kb = prepared.levels.assemble(cfg.level, doc_id, &corpus)?;
        let retrieval = match (&prepared.index, &prepared.chunks, retrieval_embedder) {
            (Some(index), Some(chunks), Some(embedder)) => Some(RetrievalStage {
                index,
                chunks,
                top_docs: cfg.sparse.n_docs,
                dense: DenseScorer {
                    batch_size: cfg.dense.batch_size,
                    ..DenseScorer::new(embedder, &cache, cfg.dense.dim)
                },
            }),
            _ => None,
        };
        let b = Backends {
            infiller: backends.infiller.as_ref(),
            retrieval,
            transcripts: &transcripts,
        };
        let outcome = infill_document(md, &kb, &infill_cfg, &b, &prepared.analyzer);
        let dataset = corpus.dataset_of(doc_id);
        let mut ranking = None;
        let mut failure = outcome.error.map(|source| PipelineError::Infill {
            doc_id: doc_id.clone(),
            source,
        });
        if failure.is_none() {
            if let (Some(scorer), Some(list)) = (scorer, candidates.get(&dataset)) {
                match rank_identities(doc_id, &outcome.document.final_text, list, scorer, md.identity.as_deref()) {
                    Ok(r) => ranking = md.identity.is_some().then_some(r),
                    Err(source) => {
                        failure = Some(PipelineError::Rank {
                            doc_id: doc_id.clone(),
                            source,
                        })
                    }
                }
            }
        }
        let mut document = outcome.document;
        if let Some(e) = &failure {
            document.complete = false;
            document.error.get_or_insert_with(|| e.to_string());
        }
        let record = DocumentRecord {
            dataset,
            gold_identity: md.identity.clone(),
            document,
            ranking,
        };
        write_json_atomic(&dir.result_path(doc_id), &record)?;
        match failure {
            Some(e) => {
                abort.store(true, Ordering::SeqCst);
                Err(e)
            }
            None => Ok(()),
        }
    };

    let outcomes: Vec<(&String, Result<(), PipelineError>)> = if cfg.concurrency <= 1 {
        pending.iter().map(|id| (*id, process(id))).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.concurrency)
            .build()
            .map_err(|e| PipelineError::Invalid(e.to_string()))?;
        pool.install(|| pending.par_iter().map(|id| (*id, process(id))).collect())
    };

    if retrieval_embedder.is_some() {
        cache.save(&dir.embeddings()).map_err(io_err(dir.embeddings()))?;
    }
    let failed: Vec<&(&String, Result<(), PipelineError>)> = outcomes.iter().filter(|(_, r)| r.is_err()).collect();
    manifest.completed = targets.len() - failed.len();
    manifest.complete = failed.is_empty();
    dir.write_manifest(&manifest)?;
    if let Some(first) = failed
        .iter()
        .find(|(_, r)| !matches!(r, Err(PipelineError::Aborted)))
        .or(failed.first())
    {
        return Err(PipelineError::Incomplete {
            failed: failed.iter().map(|(id, _)| id.to_string()).collect(),
            total: targets.len(),
            first: first.1.as_ref().err().map(|e| e.to_string()).unwrap_or_default(),
        });
    }
    Ok(AttackSummary {
        run_dir: dir.root.clone(),
        targets: targets.len(),
        processed: pending.len(),
        resumed,
        manifest_hash: manifest.hash(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexSummary {
    pub store: StoreManifest,
    pub index: Option<IndexManifest>,
    pub dump: Option<PathBuf>,
}

/// Ingests and validates the corpus, persists the store, and writes the
/// level's postings dump.
pub fn cmd_index(cfg: &RunConfig) -> Result<IndexSummary, PipelineError> {
    let corpus = load_corpus(cfg)?;
    let store_dir = cfg.output_dir.join("store");
    let store = corpus.persist(&store_dir)?;
    if !cfg.level.uses_retrieval() {
        return Ok(IndexSummary {
            store,
            index: None,
            dump: None,
        });
    }
    let prepared = prepare(cfg, &corpus)?;
    let index = prepared.index.expect("retrieval level builds an index");
    let dump = cfg.output_dir.join(format!("index-{}.jsonl", cfg.level));
    let manifest = index.write_dump(&dump)?;
    Ok(IndexSummary {
        store,
        index: Some(manifest),
        dump: Some(dump),
    })
}

/// Writes retriever training pairs for the configured level to `out`
/// (default `<output_dir>/pairs-<level>.jsonl`).
pub fn cmd_export_pairs(cfg: &RunConfig, out: Option<PathBuf>) -> Result<(PathBuf, ExportStats), PipelineError> {
    if !cfg.level.uses_retrieval() {
        return Err(PipelineError::Invalid(format!("{} has no background documents to pair", cfg.level)));
    }
    let corpus = load_corpus(cfg)?;
    let prepared = prepare(cfg, &corpus)?;
    let spec = PairSampleSpec {
        level: cfg.level,
        top_docs: cfg.sparse.n_docs,
        token_budget: cfg.dense.token_budget,
        seed: cfg.infill.seed,
        ..PairSampleSpec::default()
    };
    let path = out.unwrap_or_else(|| cfg.output_dir.join(format!("pairs-{}.jsonl", cfg.level)));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut buf = Vec::new();
    let stats = export_retriever_pairs(
        &corpus,
        &prepared.levels,
        prepared.index.as_ref().expect("index"),
        prepared.chunks.as_ref().expect("chunks"),
        &prepared.analyzer,
        &spec,
        &mut buf,
    )?;
    super::rundir::write_atomic(&path, &buf)?;
    Ok((path, stats))
}

/// Serves only what the transcript log recorded.
struct ReplayInfiller {
    model: String,
}

impl InfillBackend for ReplayInfiller {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn infill(&self, _call: &InfillCall<'_>) -> Result<InfillResponse, BackendError> {
        Err(BackendError::Protocol("replay: prompt not in the transcript log".into()))
    }
}

/// Serves only what the embedding sidecar holds.
struct ReplayEmbedder {
    model: String,
}

impl EmbeddingBackend for ReplayEmbedder {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, _texts: &[String]) -> Result<EmbedResponse, BackendError> {
        Err(BackendError::Protocol("replay: embedding not in the cache sidecar".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub documents: usize,
    pub identical: usize,
    pub mismatches: Vec<String>,
}

/// Re-runs a recorded attack offline from its manifest, corpus snapshot,
/// transcript log and embedding sidecar, and compares the outputs with the
/// stored results byte for byte. No backend is contacted.
pub fn replay_from_manifest(run_dir: &std::path::Path) -> Result<ReplayReport, PipelineError> {
    let dir = RunDir::new(run_dir);
    let manifest = dir
        .read_manifest()?
        .ok_or_else(|| PipelineError::Invalid(format!("{} has no manifest", run_dir.display())))?;
    let _lock = RunLock::acquire(&dir)?;
    let corpus = Corpus::load(&dir.corpus())?;
    let cfg = &manifest.config;
    let prepared = prepare(cfg, &corpus)?;
    let transcripts = TranscriptCache::open(&dir.transcripts()).map_err(io_err(dir.transcripts()))?;
    let cache = EmbeddingCache::open(&dir.embeddings(), usize::MAX).map_err(io_err(dir.embeddings()))?;
    let infiller = ReplayInfiller {
        model: manifest.models.infill.clone(),
    };
    let embedder = manifest.models.embed.clone().map(|model| ReplayEmbedder { model });
    let mut report = ReplayReport {
        documents: 0,
        identical: 0,
        mismatches: Vec::new(),
    };
    for id in &manifest.targets {
        let Some(stored) = read_record(&dir.result_path(id)) else {
            continue;
        };
        report.documents += 1;
        let md = corpus
            .masked(id)
            .ok_or_else(|| PipelineError::Invalid(format!("target `{id}` missing from corpus snapshot")))?;
        let kb = prepared.levels.assemble(manifest.level, id, &corpus)?;
        let retrieval = match (&prepared.index, &prepared.chunks, &embedder) {
            (Some(index), Some(chunks), Some(e)) => Some(RetrievalStage {
                index,
                chunks,
                top_docs: cfg.sparse.n_docs,
                dense: DenseScorer::new(e, &cache, cfg.dense.dim),
            }),
            _ => None,
        };
        let b = Backends {
            infiller: &infiller,
            retrieval,
            transcripts: &transcripts,
        };
        let outcome = infill_document(md, &kb, &manifest.infill, &b, &prepared.analyzer);
        let same = if stored.document.complete {
            outcome.error.is_none() && outcome.document == stored.document
        } else {
            // an interrupted document replays up to where it stopped
            outcome.document.results.starts_with(&stored.document.results)
        };
        if same {
            report.identical += 1;
        } else {
            report.mismatches.push(id.clone());
        }
    }
    Ok(report)
}
