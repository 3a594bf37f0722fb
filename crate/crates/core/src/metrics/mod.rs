//! Span-, retrieval- and identity-level attack metrics with exact,
//! order-independent aggregation.

mod frac;
mod report;

pub use frac::FracSum;
pub use report::{
    BlockKey, CoverageStats, EvalAccumulator, EvalBlock, EvalReport, GroupMetrics, InfillMetrics, ReportHeader,
    TOKEN_RECALL_SEMANTICS,
};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::analyzer;
use crate::corpus::MaskedSpan;
use crate::infill::UNANSWERED;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("document `{0}`: gold identity is not among the candidates")]
    GoldMissing(String),
    #[error("document `{doc_id}` has no masked document in the corpus")]
    UnknownDocument { doc_id: String },
}

/// NFC, case folding, trimmed, internal whitespace collapsed.
pub fn normalize_answer(s: &str) -> String {
    s.nfc()
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn forms(span: &MaskedSpan, strict: bool) -> Vec<&str> {
    match (&span.gold_surface, strict) {
        (None, _) => Vec::new(),
        (Some(g), true) => vec![g.as_str()],
        (Some(_), false) => span.gold_forms().collect(),
    }
}

/// Normalized equality against the gold (or any variant unless `strict`).
pub fn exact_match(pred: &str, span: &MaskedSpan, strict: bool) -> bool {
    if pred == UNANSWERED {
        return false;
    }
    let p = normalize_answer(pred);
    forms(span, strict).iter().any(|g| normalize_answer(g) == p)
}

/// Share of distinct predicted terms that occur in the gold, as `(hits, pred_terms)`.
///
/// Best over gold forms unless `strict`. Unanswered and term-less
/// predictions score `0/1`; an exact match always scores `1/1`.
pub fn token_recall(pred: &str, span: &MaskedSpan, strict: bool) -> (u64, u64) {
    if pred == UNANSWERED || span.gold_surface.is_none() {
        return (0, 1);
    }
    if exact_match(pred, span, strict) {
        return (1, 1);
    }
    let p: std::collections::BTreeSet<String> = analyzer::terms(pred).into_iter().collect();
    if p.is_empty() {
        return (0, 1);
    }
    let mut best = (0u64, p.len() as u64);
    for g in forms(span, strict) {
        let gs: std::collections::BTreeSet<String> = analyzer::terms(g).into_iter().collect();
        let hits = p.iter().filter(|t| gs.contains(*t)).count() as u64;
        if hits > best.0 {
            best.0 = hits;
        }
    }
    best
}

/// Masked spans of one document found in its retrieved documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocCoverage {
    pub covered: u64,
    pub total: u64,
}

impl DocCoverage {
    pub fn pct(&self) -> f64 {
        100.0 * self.covered as f64 / self.total as f64
    }
}

/// A span is covered when a gold form occurs, as whole analyzer terms, in
/// any retrieved document. Spans without gold are ignored; `None` if none remain.
pub fn sparse_coverage(spans: &[MaskedSpan], retrieved_texts: &[&str]) -> Option<DocCoverage> {
    let normalized: Vec<String> = retrieved_texts.iter().map(|t| analyzer::normalized(t)).collect();
    let gold: Vec<&MaskedSpan> = spans.iter().filter(|s| s.gold_surface.is_some()).collect();
    if gold.is_empty() {
        return None;
    }
    let covered = gold
        .iter()
        .filter(|s| normalized.iter().any(|n| crate::chunk_query::is_positive(n, s)))
        .count() as u64;
    Some(DocCoverage {
        covered,
        total: gold.len() as u64,
    })
}

/// Rank-based accuracy and reciprocal rank over the items that have a rank.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankAcc {
    pub total: u64,
    pub ranked: u64,
    pub at_1: u64,
    pub at_5: u64,
    pub at_10: u64,
    pub reciprocal: FracSum,
}

impl RankAcc {
    pub fn add(&mut self, rank: Option<usize>) {
        self.total += 1;
        let Some(r) = rank else {
            return;
        };
        assert!(r >= 1, "ranks are 1-based");
        self.ranked += 1;
        self.at_1 += u64::from(r <= 1);
        self.at_5 += u64::from(r <= 5);
        self.at_10 += u64::from(r <= 10);
        self.reciprocal.add(1, r as u64);
    }

    pub fn merge(&mut self, o: &RankAcc) {
        self.total += o.total;
        self.ranked += o.ranked;
        self.at_1 += o.at_1;
        self.at_5 += o.at_5;
        self.at_10 += o.at_10;
        self.reciprocal.merge(&o.reciprocal);
    }

    pub fn metrics(&self) -> RankMetrics {
        let pct = |c: u64| if self.ranked == 0 { 0.0 } else { 100.0 * c as f64 / self.ranked as f64 };
        RankMetrics {
            total: self.total,
            conditioned: self.ranked,
            mrr: self.reciprocal.mean().unwrap_or(0.0),
            acc_at_1: pct(self.at_1),
            acc_at_5: pct(self.at_5),
            acc_at_10: pct(self.at_10),
        }
    }
}

/// MRR in `[0, 1]`, accuracies in percent of `conditioned`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub total: u64,
    pub conditioned: u64,
    pub mrr: f64,
    pub acc_at_1: f64,
    pub acc_at_5: f64,
    pub acc_at_10: f64,
}

/// Dense retrieval quality from each span's first relevant rank; spans with
/// no relevant chunk among the candidates are left out of the denominator.
pub fn dense_eval(first_relevant: &[Option<usize>]) -> RankMetrics {
    let mut acc = RankAcc::default();
    for r in first_relevant {
        acc.add(*r);
    }
    acc.metrics()
}

/// 1-based position of the first relevant passage.
pub fn first_relevant_rank(ranked_normalized: &[&str], span: &MaskedSpan) -> Option<usize> {
    ranked_normalized
        .iter()
        .position(|n| crate::chunk_query::is_positive(n, span))
        .map(|p| p + 1)
}

/// Identity ranking quality. A document whose gold is not ranked is an error.
pub fn final_eval(gold_ranks: &[(&str, Option<usize>)]) -> Result<RankMetrics, EvalError> {
    let mut acc = RankAcc::default();
    for (doc, r) in gold_ranks {
        if r.is_none() {
            return Err(EvalError::GoldMissing(doc.to_string()));
        }
        acc.add(*r);
    }
    Ok(acc.metrics())
}

/// Exact-match and token-recall tallies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAcc {
    pub spans: u64,
    pub exact: u64,
    pub recall: FracSum,
}

impl SpanAcc {
    pub fn add(&mut self, pred: &str, span: &MaskedSpan, strict: bool) {
        self.spans += 1;
        self.exact += u64::from(exact_match(pred, span, strict));
        let (n, d) = token_recall(pred, span, strict);
        self.recall.add(n, d);
    }

    pub fn merge(&mut self, o: &SpanAcc) {
        self.spans += o.spans;
        self.exact += o.exact;
        self.recall.merge(&o.recall);
    }

    pub fn exact_match_pct(&self) -> f64 {
        if self.spans == 0 {
            0.0
        } else {
            100.0 * self.exact as f64 / self.spans as f64
        }
    }

    pub fn token_recall_pct(&self) -> f64 {
        100.0 * self.recall.mean().unwrap_or(0.0)
    }
}
