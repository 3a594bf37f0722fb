use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, FracSum, RankAcc, RankMetrics, SpanAcc};
use crate::corpus::{Dataset, KnowledgeLevel, MaskedDocument};
use crate::infill::{ReidentifiedDocument, UNANSWERED};
use crate::ranker::RankedIdentities;

pub const TOKEN_RECALL_SEMANTICS: &str =
    "distinct predicted terms (NFC, lowercased, alphanumeric runs) found in the gold span, over distinct predicted terms";
const EXACT_MATCH_SEMANTICS: &str = "NFC, lowercased, trimmed, whitespace-collapsed equality";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockKey {
    pub level: KnowledgeLevel,
    pub dataset: Dataset,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct BlockAcc {
    documents: u64,
    incomplete: u64,
    coverage: FracSum,
    dense: RankAcc,
    infill: SpanAcc,
    by_category: BTreeMap<String, SpanAcc>,
    by_identifier_class: BTreeMap<String, SpanAcc>,
    ranking: RankAcc,
}

impl BlockAcc {
    fn merge(&mut self, o: &BlockAcc) {
        self.documents += o.documents;
        self.incomplete += o.incomplete;
        self.coverage.merge(&o.coverage);
        self.dense.merge(&o.dense);
        self.infill.merge(&o.infill);
        for (k, v) in &o.by_category {
            self.by_category.entry(k.clone()).or_default().merge(v);
        }
        for (k, v) in &o.by_identifier_class {
            self.by_identifier_class.entry(k.clone()).or_default().merge(v);
        }
        self.ranking.merge(&o.ranking);
    }
}

/// Mergeable evaluation state. Shards can be accumulated independently and
/// merged in any order with identical results.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalAccumulator {
    pub strict: bool,
    blocks: BTreeMap<BlockKey, BlockAcc>,
}

impl EvalAccumulator {
    pub fn new(strict: bool) -> Self {
        Self {
            strict,
            blocks: BTreeMap::new(),
        }
    }

    /// Adds one attacked document. Spans without a result (an interrupted
    /// run) count as unanswered; spans without a gold surface are skipped.
    pub fn add_document(
        &mut self,
        dataset: Dataset,
        md: &MaskedDocument,
        doc: &ReidentifiedDocument,
        ranking: Option<&RankedIdentities>,
    ) -> Result<(), EvalError> {
        if md.doc_id != doc.doc_id {
            return Err(EvalError::UnknownDocument {
                doc_id: doc.doc_id.clone(),
            });
        }
        if let Some(r) = ranking {
            if r.gold_rank.is_none() {
                return Err(EvalError::GoldMissing(doc.doc_id.clone()));
            }
        }
        let strict = self.strict;
        let b = self
            .blocks
            .entry(BlockKey {
                level: doc.level,
                dataset,
            })
            .or_default();
        b.documents += 1;
        b.incomplete += u64::from(!doc.complete);
        let gold_spans = md.spans.iter().filter(|s| s.gold_surface.is_some());
        if doc.trace.retrieval {
            let total = doc.trace.covered.len() as u64;
            if total > 0 {
                let covered = doc.trace.covered.values().filter(|c| **c).count() as u64;
                b.coverage.add(covered, total);
            }
            for s in gold_spans.clone() {
                b.dense
                    .add(doc.trace.dense.get(&s.span_id).and_then(|t| t.first_relevant_rank));
            }
        }
        for s in gold_spans {
            let pred = doc.result(&s.span_id).map_or(UNANSWERED, |r| r.hypothesis.as_str());
            b.infill.add(pred, s, strict);
            b.by_category.entry(s.category.clone()).or_default().add(pred, s, strict);
            b.by_identifier_class
                .entry(s.identifier_class.to_string())
                .or_default()
                .add(pred, s, strict);
        }
        if let Some(r) = ranking {
            b.ranking.add(r.gold_rank);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &EvalAccumulator) {
        for (k, v) in &other.blocks {
            self.blocks.entry(*k).or_default().merge(v);
        }
    }

    pub fn finish(&self, run_manifest: Option<String>) -> EvalReport {
        let group = |m: &BTreeMap<String, SpanAcc>| {
            m.iter()
                .map(|(k, a)| {
                    (
                        k.clone(),
                        GroupMetrics {
                            spans: a.spans,
                            exact_match_pct: a.exact_match_pct(),
                            token_recall_pct: a.token_recall_pct(),
                        },
                    )
                })
                .collect()
        };
        let blocks = self
            .blocks
            .iter()
            .map(|(k, b)| EvalBlock {
                level: k.level,
                dataset: k.dataset,
                documents: b.documents,
                incomplete_documents: b.incomplete,
                sparse_coverage: (!b.coverage.is_empty()).then(|| CoverageStats {
                    documents: b.coverage.count(),
                    mean_pct: 100.0 * b.coverage.mean().unwrap_or(0.0),
                    stdev_pct: 100.0 * b.coverage.pop_stdev().unwrap_or(0.0),
                }),
                dense: (b.dense.total > 0).then(|| b.dense.metrics()),
                infill: InfillMetrics {
                    spans: b.infill.spans,
                    exact_match_pct: b.infill.exact_match_pct(),
                    token_recall_pct: b.infill.token_recall_pct(),
                    by_category: group(&b.by_category),
                    by_identifier_class: group(&b.by_identifier_class),
                },
                final_ranking: (b.ranking.total > 0).then(|| b.ranking.metrics()),
            })
            .collect();
        EvalReport {
            header: ReportHeader {
                exact_match: EXACT_MATCH_SEMANTICS.into(),
                token_recall: TOKEN_RECALL_SEMANTICS.into(),
                strict_gold: self.strict,
                run_manifest,
            },
            blocks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub exact_match: String,
    pub token_recall: String,
    /// Gold surface only, variants ignored.
    pub strict_gold: bool,
    pub run_manifest: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub documents: u64,
    pub mean_pct: f64,
    pub stdev_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub spans: u64,
    pub exact_match_pct: f64,
    pub token_recall_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillMetrics {
    pub spans: u64,
    pub exact_match_pct: f64,
    pub token_recall_pct: f64,
    pub by_category: BTreeMap<String, GroupMetrics>,
    pub by_identifier_class: BTreeMap<String, GroupMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalBlock {
    pub level: KnowledgeLevel,
    pub dataset: Dataset,
    pub documents: u64,
    pub incomplete_documents: u64,
    pub sparse_coverage: Option<CoverageStats>,
    pub dense: Option<RankMetrics>,
    pub infill: InfillMetrics,
    pub final_ranking: Option<RankMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub header: ReportHeader,
    pub blocks: Vec<EvalBlock>,
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

impl EvalReport {
    pub fn block(&self, level: KnowledgeLevel, dataset: Dataset) -> Option<&EvalBlock> {
        self.blocks.iter().find(|b| b.level == level && b.dataset == dataset)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Fixed-width summary, one row per level and dataset.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "exact match: {}", self.header.exact_match);
        let _ = writeln!(out, "token recall: {}", self.header.token_recall);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<5} {:<10} {:>5} {:>15} {:>6} {:>6} {:>6} {:>6} {:>7} {:>7} {:>6} {:>6} {:>6} {:>6}",
            "level", "dataset", "docs", "coverage%", "MRR", "@1", "@5", "@10", "EM%", "TR%", "id@1", "id@5", "id@10", "idMRR"
        );
        for b in &self.blocks {
            let cov = b
                .sparse_coverage
                .map_or_else(|| "-".into(), |c| format!("{:.2}±{:.2}", c.mean_pct, c.stdev_pct));
            let d = b.dense.as_ref();
            let f = b.final_ranking.as_ref();
            let _ = writeln!(
                out,
                "{:<5} {:<10} {:>5} {:>15} {:>6} {:>6} {:>6} {:>6} {:>7.2} {:>7.2} {:>6} {:>6} {:>6} {:>6}",
                b.level.to_string(),
                b.dataset.to_string(),
                b.documents,
                cov,
                opt(d.map(|m| m.mrr), 3),
                opt(d.map(|m| m.acc_at_1), 1),
                opt(d.map(|m| m.acc_at_5), 1),
                opt(d.map(|m| m.acc_at_10), 1),
                b.infill.exact_match_pct,
                b.infill.token_recall_pct,
                opt(f.map(|m| m.acc_at_1), 1),
                opt(f.map(|m| m.acc_at_5), 1),
                opt(f.map(|m| m.acc_at_10), 1),
                opt(f.map(|m| m.mrr), 3),
            );
        }
        out
    }

    /// Writes `summary.csv`, `by_category.csv` and `by_identifier_class.csv`.
    pub fn write_csv(&self, dir: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record([
            "level",
            "dataset",
            "documents",
            "incomplete",
            "coverage_mean_pct",
            "coverage_stdev_pct",
            "dense_conditioned",
            "dense_mrr",
            "dense_acc1",
            "dense_acc5",
            "dense_acc10",
            "spans",
            "exact_match_pct",
            "token_recall_pct",
            "final_acc1",
            "final_acc5",
            "final_acc10",
            "final_mrr",
        ])?;
        let f = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for b in &self.blocks {
            let d = b.dense.as_ref();
            let r = b.final_ranking.as_ref();
            w.write_record([
                b.level.to_string(),
                b.dataset.to_string(),
                b.documents.to_string(),
                b.incomplete_documents.to_string(),
                f(b.sparse_coverage.map(|c| c.mean_pct)),
                f(b.sparse_coverage.map(|c| c.stdev_pct)),
                d.map_or_else(String::new, |m| m.conditioned.to_string()),
                f(d.map(|m| m.mrr)),
                f(d.map(|m| m.acc_at_1)),
                f(d.map(|m| m.acc_at_5)),
                f(d.map(|m| m.acc_at_10)),
                b.infill.spans.to_string(),
                b.infill.exact_match_pct.to_string(),
                b.infill.token_recall_pct.to_string(),
                f(r.map(|m| m.acc_at_1)),
                f(r.map(|m| m.acc_at_5)),
                f(r.map(|m| m.acc_at_10)),
                f(r.map(|m| m.mrr)),
            ])?;
        }
        w.flush()?;
        for (name, pick) in [
            ("by_category.csv", (|b: &EvalBlock| &b.infill.by_category) as fn(&EvalBlock) -> &BTreeMap<String, GroupMetrics>),
            ("by_identifier_class.csv", |b: &EvalBlock| &b.infill.by_identifier_class),
        ] {
            let mut w = csv::Writer::from_path(dir.join(name))?;
            w.write_record(["level", "dataset", "group", "spans", "exact_match_pct", "token_recall_pct"])?;
            for b in &self.blocks {
                for (g, m) in pick(b) {
                    w.write_record([
                        b.level.to_string(),
                        b.dataset.to_string(),
                        g.clone(),
                        m.spans.to_string(),
                        m.exact_match_pct.to_string(),
                        m.token_recall_pct.to_string(),
                    ])?;
                }
            }
            w.flush()?;
        }
        Ok(())
    }
}
