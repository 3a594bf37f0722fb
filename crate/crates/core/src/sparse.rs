//! Inverted index and top-N document retrieval.
//!
//! Scoring goes through [`TermScorer`]; the registry in [`scorer_for`] maps a
//! configured strategy name to an implementation. Only exact BM25 ships:
//!
//! ```text
//! score(q, d) = Σ_{t ∈ terms(q)} idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·dl/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query terms are deduplicated before scoring. Hits are sorted by
//! descending score with ties broken by ascending doc id; documents with no
//! query term never appear.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analyzer::Analyzer;
use crate::corpus::{Corpus, KnowledgeBase};

pub const DEFAULT_TOP_DOCS: usize = 100;
pub const DEFAULT_K1: f64 = 1.5;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("knowledge base is empty; L1 runs must skip retrieval")]
    EmptyKnowledgeBase,
    #[error("knowledge base references unknown document `{0}`")]
    UnknownDocument(String),
    #[error("unknown scoring strategy `{0}`")]
    UnknownStrategy(String),
    #[error("index dump {path}: {message}")]
    Dump { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Corpus statistics a term scorer sees for one (term, document) pair.
#[derive(Debug, Clone, Copy)]
pub struct TermStats {
    pub tf: u32,
    pub df: u32,
    pub n_docs: usize,
    pub doc_len: u32,
    pub avg_doc_len: f64,
}

/// Per-term relevance contribution; implement to add a scoring strategy.
pub trait TermScorer: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn score(&self, stats: TermStats) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25 {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25 {
    fn default() -> Self {
        Self {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

impl Bm25 {
    pub fn idf(df: u32, n_docs: usize) -> f64 {
        let (n, df) = (n_docs as f64, df as f64);
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

impl TermScorer for Bm25 {
    fn name(&self) -> &str {
        "bm25"
    }

    fn score(&self, s: TermStats) -> f64 {
        let tf = s.tf as f64;
        let norm = 1.0 - self.b + self.b * (s.doc_len as f64 / s.avg_doc_len);
        Bm25::idf(s.df, s.n_docs) * (tf * (self.k1 + 1.0)) / (tf + self.k1 * norm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub strategy: String,
    pub k1: f64,
    pub b: f64,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            strategy: "bm25".into(),
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

/// Resolves a strategy name to a scorer.
pub fn scorer_for(params: &ScoringParams) -> Result<Arc<dyn TermScorer>, IndexError> {
    match params.strategy.as_str() {
        "bm25" => Ok(Arc::new(Bm25 {
            k1: params.k1,
            b: params.b,
        })),
        other => Err(IndexError::UnknownStrategy(other.to_string())),
    }
}

/// A retrieval hit: a document or chunk id with its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub target_id: String,
    pub score: f64,
}

/// Sorts hits by descending score, ties by ascending id.
pub fn sort_hits(hits: &mut [ScoredHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.target_id.cmp(&b.target_id)));
}

/// Scores closer than this (relative) are the same score.
pub const TIE_EPSILON: f64 = 1e-12;

/// Different term statistics can give mathematically equal scores that
/// floating point separates by an ulp or two. Runs of descending scores
/// whose neighbours differ by at most [`TIE_EPSILON`] are collapsed to the
/// run's top score and reordered by ascending doc index.
fn settle_ties(ranked: &mut [(u32, f64)]) {
    let mut i = 0;
    while i < ranked.len() {
        let mut j = i + 1;
        while j < ranked.len() && ranked[j - 1].1 - ranked[j].1 <= TIE_EPSILON * ranked[j - 1].1.abs().max(1.0) {
            j += 1;
        }
        if j - i > 1 {
            let top = ranked[i].1;
            let run = &mut ranked[i..j];
            run.iter_mut().for_each(|h| h.1 = top);
            run.sort_by_key(|h| h.0);
        }
        i = j;
    }
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    doc_pos: HashMap<String, u32>,
    doc_lengths: Vec<u32>,
    postings: HashMap<String, Vec<(u32, u32)>>,
    avg_doc_len: f64,
    params: ScoringParams,
    scorer: Arc<dyn TermScorer>,
    analyzer: Analyzer,
}

/// Builds an index over the knowledge base's document set.
///
/// At L3 the set still holds the target's original; it is withheld per
/// query through [`InvertedIndex::retrieve_excluding`].
pub fn build_index(
    kb: &KnowledgeBase,
    corpus: &Corpus,
    analyzer: &Analyzer,
    params: &ScoringParams,
) -> Result<InvertedIndex, IndexError> {
    if kb.documents.is_empty() {
        return Err(IndexError::EmptyKnowledgeBase);
    }
    let texts = kb
        .documents
        .iter()
        .map(|id| {
            corpus
                .document(id)
                .map(|d| (id.as_str(), d.text.as_str()))
                .ok_or_else(|| IndexError::UnknownDocument(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    InvertedIndex::from_texts(texts, analyzer, params)
}

impl InvertedIndex {
    /// Builds from `(doc_id, text)` pairs; ids must be unique.
    pub fn from_texts<'a>(
        docs: impl IntoIterator<Item = (&'a str, &'a str)>,
        analyzer: &Analyzer,
        params: &ScoringParams,
    ) -> Result<Self, IndexError> {
        let scorer = scorer_for(params)?;
        let mut docs: Vec<(&str, &str)> = docs.into_iter().collect();
        if docs.is_empty() {
            return Err(IndexError::EmptyKnowledgeBase);
        }
        docs.sort_by(|a, b| a.0.cmp(b.0));

        let analyzed: Vec<(u32, BTreeMap<String, u32>)> = docs
            .par_iter()
            .map(|(_, text)| {
                let terms = analyzer.index_terms(text);
                let mut counts = BTreeMap::new();
                for t in &terms {
                    *counts.entry(t.clone()).or_insert(0u32) += 1;
                }
                (terms.len() as u32, counts)
            })
            .collect();

        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (i, (len, counts)) in analyzed.into_iter().enumerate() {
            doc_lengths.push(len);
            for (term, tf) in counts {
                postings.entry(term).or_default().push((i as u32, tf));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_len = total as f64 / doc_lengths.len() as f64;
        let doc_ids: Vec<String> = docs.iter().map(|(id, _)| id.to_string()).collect();
        let doc_pos = doc_ids.iter().enumerate().map(|(i, d)| (d.clone(), i as u32)).collect();
        Ok(Self {
            doc_ids,
            doc_pos,
            doc_lengths,
            postings,
            avg_doc_len,
            params: params.clone(),
            scorer,
            analyzer: analyzer.clone(),
        })
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn params(&self) -> &ScoringParams {
        &self.params
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.doc_pos.get(doc_id).map(|&i| self.doc_lengths[i as usize])
    }

    /// Postings for `term` as `(doc_id, tf)`, ascending by doc id.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|p| p.iter().map(|&(d, tf)| (self.doc_ids[d as usize].as_str(), tf)).collect())
            .unwrap_or_default()
    }

    pub fn vocabulary_len(&self) -> usize {
        self.postings.len()
    }

    /// Top `n` documents for `query_text`.
    pub fn retrieve_docs(&self, query_text: &str, n: usize) -> Vec<ScoredHit> {
        self.retrieve_excluding(query_text, n, &BTreeSet::new())
    }

    /// Top `n` documents, never returning any id in `excluded`.
    pub fn retrieve_excluding(&self, query_text: &str, n: usize, excluded: &BTreeSet<String>) -> Vec<ScoredHit> {
        let terms: BTreeSet<String> = self.analyzer.index_terms(query_text).into_iter().collect();
        self.score_terms(&terms, n, excluded)
    }

    fn score_terms(&self, terms: &BTreeSet<String>, n: usize, excluded: &BTreeSet<String>) -> Vec<ScoredHit> {
        if n == 0 {
            return Vec::new();
        }
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let df = list.len() as u32;
            for &(d, tf) in list {
                let s = self.scorer.score(TermStats {
                    tf,
                    df,
                    n_docs: self.doc_ids.len(),
                    doc_len: self.doc_lengths[d as usize],
                    avg_doc_len: self.avg_doc_len,
                });
                *acc.entry(d).or_insert(0.0) += s;
            }
        }
        let mut ranked: Vec<(u32, f64)> = acc
            .into_iter()
            .filter(|&(d, s)| s.is_finite() && s > 0.0 && !excluded.contains(&self.doc_ids[d as usize]))
            .collect();
        // doc indices follow ascending doc id, so index order is the tie rule
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        settle_ties(&mut ranked);
        ranked.truncate(n);
        ranked
            .into_iter()
            .map(|(d, score)| ScoredHit {
                target_id: self.doc_ids[d as usize].clone(),
                score,
            })
            .collect()
    }

    fn dump_body(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            serde_json::to_writer(&mut out, &DumpLine::Doc { doc: id.clone(), len: *len }).expect("serialize");
            out.push(b'\n');
        }
        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort();
        for term in terms {
            let postings = self.postings[term]
                .iter()
                .map(|&(d, tf)| (self.doc_ids[d as usize].clone(), tf))
                .collect();
            serde_json::to_writer(&mut out, &DumpLine::Term { term: term.clone(), postings }).expect("serialize");
            out.push(b'\n');
        }
        out
    }

    /// SHA-256 over the canonical postings dump body, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.dump_body()))
    }

    pub fn manifest(&self) -> IndexManifest {
        IndexManifest {
            format: DUMP_FORMAT.into(),
            version: DUMP_VERSION,
            params: self.params.clone(),
            n_docs: self.n_docs(),
            avg_doc_len: self.avg_doc_len,
            terms: self.postings.len(),
            content_hash: self.content_hash(),
        }
    }

    /// Writes the JSONL postings dump: a manifest line, one line per
    /// document length, then one line per term in byte order.
    pub fn write_dump(&self, path: &Path) -> Result<IndexManifest, IndexError> {
        let body = self.dump_body();
        let manifest = IndexManifest {
            content_hash: hex::encode(Sha256::digest(&body)),
            ..self.manifest()
        };
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer(&mut f, &manifest).expect("serialize");
        f.write_all(b"\n")?;
        f.write_all(&body)?;
        f.flush()?;
        Ok(manifest)
    }

    /// Reads a dump written by [`Self::write_dump`], verifying its hash.
    pub fn read_dump(path: &Path, analyzer: &Analyzer) -> Result<Self, IndexError> {
        let dump_err = |message: String| IndexError::Dump {
            path: path.display().to_string(),
            message,
        };
        let mut lines = BufReader::new(fs::File::open(path)?).lines();
        let head = lines.next().ok_or_else(|| dump_err("empty dump".into()))??;
        let manifest: IndexManifest = serde_json::from_str(&head).map_err(|e| dump_err(e.to_string()))?;
        if manifest.format != DUMP_FORMAT || manifest.version != DUMP_VERSION {
            return Err(dump_err(format!("unsupported format {} v{}", manifest.format, manifest.version)));
        }
        let scorer = scorer_for(&manifest.params)?;
        let mut doc_ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut raw_postings = Vec::new();
        for line in lines {
            let line = line?;
            match serde_json::from_str::<DumpLine>(&line).map_err(|e| dump_err(e.to_string()))? {
                DumpLine::Doc { doc, len } => {
                    doc_ids.push(doc);
                    doc_lengths.push(len);
                }
                DumpLine::Term { term, postings } => raw_postings.push((term, postings)),
            }
        }
        let doc_pos: HashMap<String, u32> = doc_ids.iter().enumerate().map(|(i, d)| (d.clone(), i as u32)).collect();
        let mut postings = HashMap::new();
        for (term, list) in raw_postings {
            let list = list
                .into_iter()
                .map(|(d, tf)| {
                    doc_pos
                        .get(&d)
                        .map(|&i| (i, tf))
                        .ok_or_else(|| dump_err(format!("posting for unknown doc `{d}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            postings.insert(term, list);
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let index = Self {
            avg_doc_len: total as f64 / doc_lengths.len().max(1) as f64,
            doc_ids,
            doc_pos,
            doc_lengths,
            postings,
            params: manifest.params.clone(),
            scorer,
            analyzer: analyzer.clone(),
        };
        if index.content_hash() != manifest.content_hash {
            return Err(dump_err("content hash mismatch".into()));
        }
        Ok(index)
    }
}

const DUMP_FORMAT: &str = "reident-postings";
const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format: String,
    pub version: u32,
    pub params: ScoringParams,
    pub n_docs: usize,
    pub avg_doc_len: f64,
    pub terms: usize,
    pub content_hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DumpLine {
    Doc { doc: String, len: u32 },
    Term { term: String, postings: Vec<(String, u32)> },
}
