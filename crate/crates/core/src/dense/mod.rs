//! Late-interaction chunk scoring.
//!
//! `maxsim(q, d) = Σ_i max_j ⟨q_i, d_j⟩` over unit-normalized token rows,
//! i.e. the sum of each query token's best cosine similarity. Rows are
//! normalized on ingestion whatever the backend returned.

mod cache;

pub use cache::{CacheKey, EmbeddingCache, DEFAULT_CACHE_BUDGET_BYTES};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{BackendError, EmbeddingBackend};
use crate::chunk_query::{Chunk, MaskQuery};

pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_BATCH: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum DenseError {
    #[error("dimension mismatch: query {query} vs document {doc}")]
    DimensionMismatch { query: usize, doc: usize },
    #[error("embedding `{0}` has no token rows")]
    Empty(String),
    #[error("embedding `{id}` row {row} has zero or non-finite norm")]
    DegenerateRow { id: String, row: usize },
    #[error("embedding `{id}`: {len} values do not form rows of {dim}")]
    Shape { id: String, len: usize, dim: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Row-major token embeddings with unit-norm rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    id: String,
    dim: usize,
    data: Vec<f64>,
}

impl TokenEmbeddings {
    /// Normalizes each row to unit length.
    pub fn new(id: impl Into<String>, dim: usize, mut data: Vec<f64>) -> Result<Self, DenseError> {
        let id = id.into();
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(DenseError::Shape {
                id,
                len: data.len(),
                dim,
            });
        }
        if data.is_empty() {
            return Err(DenseError::Empty(id));
        }
        for (r, row) in data.chunks_mut(dim).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(DenseError::DegenerateRow { id, row: r });
            }
            row.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(Self { id, dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(id: impl Into<String>, rows: &[R]) -> Result<Self, DenseError> {
        let id = id.into();
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or_else(|| DenseError::Empty(id.clone()))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(DenseError::Shape {
                    id,
                    len: r.len(),
                    dim,
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(id, dim, data)
    }

    pub fn from_f32_rows(id: impl Into<String>, rows: &[Vec<f32>]) -> Result<Self, DenseError> {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
        Self::from_rows(id, &rows)
    }

    /// Rebuilds from rows already known to be unit-norm (cache loads).
    pub(crate) fn from_normalized(id: String, dim: usize, data: Vec<f64>) -> Self {
        Self { id, dim, data }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_tokens(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn byte_size(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>() + self.id.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sum over query rows of the best dot product against any document row.
pub fn maxsim(q: &TokenEmbeddings, d: &TokenEmbeddings) -> Result<f64, DenseError> {
    if q.dim != d.dim {
        return Err(DenseError::DimensionMismatch {
            query: q.dim,
            doc: d.dim,
        });
    }
    Ok(q
        .rows()
        .map(|qr| d.rows().map(|dr| dot(qr, dr)).fold(f64::NEG_INFINITY, f64::max))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseHit {
    pub span_id: String,
    pub chunk_id: String,
    pub score: f64,
}

/// Descending score, ties by ascending chunk id.
pub fn sort_dense_hits(hits: &mut [DenseHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
}

/// Cache id for a query text.
pub fn query_cache_id(text: &str) -> String {
    format!("query:{}", &hex::encode(Sha256::digest(text.as_bytes()))[..32])
}

/// Embeds and scores candidate chunks through a backend and a shared cache.
pub struct DenseScorer<'a> {
    pub backend: &'a dyn EmbeddingBackend,
    pub cache: &'a EmbeddingCache,
    pub dim: usize,
    pub batch_size: usize,
}

impl<'a> DenseScorer<'a> {
    pub fn new(backend: &'a dyn EmbeddingBackend, cache: &'a EmbeddingCache, dim: usize) -> Self {
        Self {
            backend,
            cache,
            dim,
            batch_size: DEFAULT_BATCH,
        }
    }

    fn key(&self, id: &str) -> CacheKey {
        CacheKey {
            id: id.to_string(),
            model_id: self.backend.model_id().to_string(),
            dim: self.dim as u32,
        }
    }

    /// Embeds `(id, text)` pairs, consulting the cache first.
    pub fn embed_all(&self, items: &[(&str, &str)]) -> Result<Vec<Arc<TokenEmbeddings>>, DenseError> {
        let mut out: Vec<Option<Arc<TokenEmbeddings>>> = items.iter().map(|(id, _)| self.cache.get(&self.key(id))).collect();
        let missing: Vec<usize> = (0..items.len()).filter(|&i| out[i].is_none()).collect();
        for batch in missing.chunks(self.batch_size.max(1)) {
            let texts: Vec<String> = batch.iter().map(|&i| items[i].1.to_string()).collect();
            let resp = self.backend.embed(&texts)?;
            resp.validate(texts.len(), Some(self.dim))?;
            for (&i, rows) in batch.iter().zip(resp.embeddings) {
                let emb = Arc::new(TokenEmbeddings::from_f32_rows(items[i].0, &rows)?);
                self.cache.insert(self.key(items[i].0), Arc::clone(&emb));
                out[i] = Some(emb);
            }
        }
        Ok(out.into_iter().map(|e| e.expect("filled")).collect())
    }

    pub fn embed_query(&self, query: &MaskQuery) -> Result<Arc<TokenEmbeddings>, DenseError> {
        let id = query_cache_id(&query.text);
        Ok(self.embed_all(&[(&id, &query.text)])?.remove(0))
    }

    /// Every candidate scored and sorted.
    pub fn rank_chunks(&self, query: &MaskQuery, candidates: &[&Chunk]) -> Result<Vec<DenseHit>, DenseError> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.embed_query(query)?;
        let items: Vec<(&str, &str)> = candidates.iter().map(|c| (c.chunk_id.as_str(), c.text.as_str())).collect();
        let embs = self.embed_all(&items)?;
        let mut hits = candidates
            .iter()
            .zip(&embs)
            .map(|(c, e)| {
                Ok(DenseHit {
                    span_id: query.span_id.clone(),
                    chunk_id: c.chunk_id.clone(),
                    score: maxsim(&q, e)?,
                })
            })
            .collect::<Result<Vec<_>, DenseError>>()?;
        sort_dense_hits(&mut hits);
        Ok(hits)
    }

    /// Top `k` candidates.
    pub fn retrieve_chunks(&self, query: &MaskQuery, candidates: &[&Chunk], k: usize) -> Result<Vec<DenseHit>, DenseError> {
        let mut hits = self.rank_chunks(query, candidates)?;
        hits.truncate(k);
        Ok(hits)
    }
}

/// Top-`k` chunks for one span's query.
pub fn retrieve_chunks(
    query: &MaskQuery,
    candidates: &[&Chunk],
    backend: &dyn EmbeddingBackend,
    cache: &EmbeddingCache,
    dim: usize,
    k: usize,
) -> Result<Vec<DenseHit>, DenseError> {
    DenseScorer::new(backend, cache, dim).retrieve_chunks(query, candidates, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::HashEmbedder;

    fn emb(rows: &[&[f64]]) -> TokenEmbeddings {
        TokenEmbeddings::from_rows("x", rows).unwrap()
    }

    #[test]
    fn identity_and_orthogonal() {
        assert!((maxsim(&emb(&[&[1.0, 0.0]]), &emb(&[&[1.0, 0.0]])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(maxsim(&emb(&[&[1.0, 0.0]]), &emb(&[&[0.0, 1.0], &[0.0, -2.0]])).unwrap().max(0.0), 0.0);
    }

    #[test]
    fn hand_computed_pair() {
        let q = emb(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let d = emb(&[&[0.6, 0.8], &[1.0, 0.0]]);
        assert!((maxsim(&q, &d).unwrap() - 1.8).abs() < 1e-12);
    }

    #[test]
    fn rows_are_normalized() {
        let e = emb(&[&[3.0, 4.0]]);
        assert_eq!(e.row(0), &[0.6, 0.8]);
        assert!(TokenEmbeddings::from_rows("z", &[[0.0, 0.0]]).is_err());
        assert!(TokenEmbeddings::from_rows::<[f64; 2]>("z", &[]).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            maxsim(&emb(&[&[1.0, 0.0]]), &emb(&[&[1.0, 0.0, 0.0]])),
            Err(DenseError::DimensionMismatch { query: 2, doc: 3 })
        ));
    }

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            doc_id: id.split('#').next().unwrap().into(),
            start: 0,
            end: text.chars().count(),
            text: text.into(),
        }
    }

    #[test]
    fn retrieval_prefers_lexical_overlap_and_caches() {
        let backend = HashEmbedder::new(32);
        let cache = EmbeddingCache::new(DEFAULT_CACHE_BUDGET_BYTES);
        let q = MaskQuery {
            span_id: "s".into(),
            text: "the applicant lives in the german city of [MASK]".into(),
            token_budget: 128,
        };
        let a = chunk("a#0", "Aachen is the westernmost city in Germany, the applicant lives there");
        let b = chunk("b#0", "Bananas grow on tropical plants");
        let hits = retrieve_chunks(&q, &[&b, &a], &backend, &cache, 32, 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].chunk_id, "a#0");
        let calls = backend.calls();
        retrieve_chunks(&q, &[&b, &a], &backend, &cache, 32, 2).unwrap();
        assert_eq!(backend.calls(), calls, "second pass served from cache");
    }

    #[test]
    fn no_candidates_no_hits() {
        let backend = HashEmbedder::new(32);
        let cache = EmbeddingCache::new(1 << 20);
        let q = MaskQuery {
            span_id: "s".into(),
            text: "[MASK]".into(),
            token_budget: 128,
        };
        assert!(retrieve_chunks(&q, &[], &backend, &cache, 32, 5).unwrap().is_empty());
        assert_eq!(backend.calls(), 0);
    }
}
