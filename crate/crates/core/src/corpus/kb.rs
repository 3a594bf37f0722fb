use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError};

/// Adversary background-knowledge level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KnowledgeLevel {
    /// No retrieval.
    L1,
    /// General background only.
    L2,
    /// General background plus every original except the target's.
    L3,
    /// General background plus every original.
    L4,
}

impl KnowledgeLevel {
    pub const ALL: [KnowledgeLevel; 4] = [Self::L1, Self::L2, Self::L3, Self::L4];

    pub fn uses_retrieval(self) -> bool {
        self != KnowledgeLevel::L1
    }
}

impl fmt::Display for KnowledgeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for KnowledgeLevel {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L1" => Ok(Self::L1),
            "L2" => Ok(Self::L2),
            "L3" => Ok(Self::L3),
            "L4" => Ok(Self::L4),
            _ => Err(CorpusError::UnknownLevel(s.to_string())),
        }
    }
}

/// Background knowledge available when attacking one target.
///
/// `documents` is the level's shared document set; at L3 it equals the L4
/// set and the target's own original sits in `excluded`, which every
/// retrieval applies at query time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    pub level: KnowledgeLevel,
    pub documents: Arc<BTreeSet<String>>,
    pub excluded: BTreeSet<String>,
    pub warnings: Vec<String>,
}

impl KnowledgeBase {
    pub fn contains(&self, doc_id: &str) -> bool {
        self.documents.contains(doc_id) && !self.excluded.contains(doc_id)
    }

    /// Documents visible to the adversary, ascending by id.
    pub fn effective_documents(&self) -> impl Iterator<Item = &String> {
        self.documents.iter().filter(|d| !self.excluded.contains(*d))
    }

    pub fn effective_len(&self) -> usize {
        self.documents.len() - self.excluded.iter().filter(|d| self.documents.contains(*d)).count()
    }

    pub fn is_empty(&self) -> bool {
        self.effective_len() == 0
    }
}

/// Per-level document sets for one corpus, built once and shared across targets.
#[derive(Debug, Clone)]
pub struct LevelSets {
    empty: Arc<BTreeSet<String>>,
    general: Arc<BTreeSet<String>>,
    all: Arc<BTreeSet<String>>,
}

impl LevelSets {
    pub fn new(corpus: &Corpus) -> Self {
        let general: BTreeSet<String> = corpus
            .documents()
            .filter(|d| d.is_original_of.is_none())
            .map(|d| d.doc_id.clone())
            .collect();
        let all: BTreeSet<String> = corpus.documents().map(|d| d.doc_id.clone()).collect();
        Self {
            empty: Arc::new(BTreeSet::new()),
            general: Arc::new(general),
            all: Arc::new(all),
        }
    }

    /// The shared set a level's index covers (L3 and L4 share one).
    pub fn universe(&self, level: KnowledgeLevel) -> &Arc<BTreeSet<String>> {
        match level {
            KnowledgeLevel::L1 => &self.empty,
            KnowledgeLevel::L2 => &self.general,
            KnowledgeLevel::L3 | KnowledgeLevel::L4 => &self.all,
        }
    }

    pub fn assemble(&self, level: KnowledgeLevel, target: &str, corpus: &Corpus) -> Result<KnowledgeBase, CorpusError> {
        if corpus.masked(target).is_none() {
            return Err(CorpusError::UnknownTarget(target.to_string()));
        }
        let mut warnings = Vec::new();
        let originals = corpus.originals_of(target);
        if matches!(level, KnowledgeLevel::L3 | KnowledgeLevel::L4) && originals.is_empty() && corpus.has_originals() {
            let w = format!("target `{target}` has no linked original; {level} behaves like a larger L2 for it");
            log::warn!("{w}");
            warnings.push(w);
        }
        let excluded = if level == KnowledgeLevel::L3 {
            originals.iter().cloned().collect()
        } else {
            BTreeSet::new()
        };
        Ok(KnowledgeBase {
            level,
            documents: Arc::clone(self.universe(level)),
            excluded,
            warnings,
        })
    }
}

/// Knowledge base for attacking `target` at `level`.
pub fn assemble_kb(level: KnowledgeLevel, target: &str, corpus: &Corpus) -> Result<KnowledgeBase, CorpusError> {
    LevelSets::new(corpus).assemble(level, target, corpus)
}
