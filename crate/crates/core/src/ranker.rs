//! Ranking candidate identities against an infilled document.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::analyzer;
use crate::backend::{BackendError, RankBackend, RankRequest};

#[derive(Debug, thiserror::Error)]
pub enum RankError {
    #[error("candidate list is empty")]
    Empty,
    #[error("duplicate candidate `{0}`")]
    Duplicate(String),
    #[error("scorer returned {got} scores for {expected} candidates")]
    ScoreCount { expected: usize, got: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    DatasetIdentities,
    UserSupplied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateList {
    candidates: Vec<String>,
    pub source: CandidateSource,
}

impl CandidateList {
    pub fn new(candidates: Vec<String>, source: CandidateSource) -> Result<Self, RankError> {
        if candidates.is_empty() {
            return Err(RankError::Empty);
        }
        let mut seen = HashSet::new();
        if let Some(d) = candidates.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(RankError::Duplicate(d.clone()));
        }
        Ok(Self { candidates, source })
    }

    /// Distinct identities, ascending.
    pub fn from_identities<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<Self, RankError> {
        let set: BTreeSet<String> = ids.into_iter().map(str::to_string).collect();
        Self::new(set.into_iter().collect(), CandidateSource::DatasetIdentities)
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains_identity(&self, identity: &str) -> bool {
        let k = identity_key(identity);
        self.candidates.iter().any(|c| identity_key(c) == k)
    }
}

/// NFC plus case folding, surrounding whitespace dropped.
pub fn identity_key(s: &str) -> String {
    s.trim().nfc().collect::<String>().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedIdentities {
    pub doc_id: String,
    pub ranking: Vec<(String, f64)>,
    /// 1-based.
    pub gold_rank: Option<usize>,
}

/// Scores every candidate against a text, index-aligned.
pub trait IdentityScorer: Sync {
    fn name(&self) -> &str;
    fn score_all(&self, text: &str, candidates: &[String]) -> Result<Vec<f64>, RankError>;
}

/// Term-overlap baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

/// `(3 · full-name occurrences + distinct name tokens present) / name tokens`.
///
/// Both counts are over analyzer terms, so matching is whole-word and
/// case-insensitive.
pub fn built_in_lexical_score(text: &str, candidate: &str) -> f64 {
    let text_terms = analyzer::terms(text);
    lexical_score_terms(&text_terms, &text_terms.iter().map(String::as_str).collect(), candidate)
}

fn lexical_score_terms(text_terms: &[String], text_set: &HashSet<&str>, candidate: &str) -> f64 {
    let name = analyzer::terms(candidate);
    if name.is_empty() {
        return 0.0;
    }
    let full = if text_terms.len() >= name.len() {
        text_terms.windows(name.len()).filter(|w| *w == name.as_slice()).count()
    } else {
        0
    };
    let distinct: HashSet<&str> = name.iter().map(String::as_str).filter(|t| text_set.contains(t)).collect();
    (3 * full + distinct.len()) as f64 / name.len() as f64
}

impl IdentityScorer for LexicalScorer {
    fn name(&self) -> &str {
        "lexical"
    }

    fn score_all(&self, text: &str, candidates: &[String]) -> Result<Vec<f64>, RankError> {
        let terms = analyzer::terms(text);
        let set: HashSet<&str> = terms.iter().map(String::as_str).collect();
        Ok(candidates.iter().map(|c| lexical_score_terms(&terms, &set, c)).collect())
    }
}

/// A served ranker behind `/rank`.
pub struct RemoteScorer<'a>(pub &'a dyn RankBackend);

impl IdentityScorer for RemoteScorer<'_> {
    fn name(&self) -> &str {
        self.0.model_id()
    }

    fn score_all(&self, text: &str, candidates: &[String]) -> Result<Vec<f64>, RankError> {
        let resp = self.0.rank(&RankRequest {
            model: self.0.model_id().to_string(),
            text: text.to_string(),
            candidates: candidates.to_vec(),
        })?;
        Ok(resp.scores)
    }
}

/// Sorts candidates by descending score, ties by ascending identity, and
/// locates `gold` (matched by [`identity_key`]).
pub fn rank_identities(
    doc_id: &str,
    final_text: &str,
    candidates: &CandidateList,
    scorer: &dyn IdentityScorer,
    gold: Option<&str>,
) -> Result<RankedIdentities, RankError> {
    let scores = scorer.score_all(final_text, candidates.candidates())?;
    if scores.len() != candidates.len() {
        return Err(RankError::ScoreCount {
            expected: candidates.len(),
            got: scores.len(),
        });
    }
    let mut ranking: Vec<(String, f64)> = candidates.candidates().iter().cloned().zip(scores).collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let gold_rank = gold.and_then(|g| {
        let k = identity_key(g);
        ranking.iter().position(|(c, _)| identity_key(c) == k).map(|p| p + 1)
    });
    Ok(RankedIdentities {
        doc_id: doc_id.to_string(),
        ranking,
        gold_rank,
    })
}
