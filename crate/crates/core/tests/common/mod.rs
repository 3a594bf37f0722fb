//! Brute-force reference implementations and random generators shared by
//! the property and acceptance suites. Oracles deliberately avoid the
//! library's own helpers.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use reident::corpus::{IdentifierClass, MaskedDocument, MaskedSpan};

/// Lowercased alphanumeric runs. Matches the library's analyzer on text
/// that is already NFC and has no placeholders.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Every document with a positive BM25 score, descending, ties by id.
pub fn bm25_brute(docs: &[(String, String)], query: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
    let tokenized: Vec<Vec<String>> = docs.iter().map(|(_, t)| words(t)).collect();
    let n = docs.len() as f64;
    let avgdl = tokenized.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let q: BTreeSet<String> = words(query).into_iter().collect();
    let mut out = Vec::new();
    for (i, (id, _)) in docs.iter().enumerate() {
        let dl = tokenized[i].len() as f64;
        let mut score = 0.0;
        let mut any = false;
        for t in &q {
            let tf = tokenized[i].iter().filter(|w| *w == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            any = true;
            let df = tokenized.iter().filter(|d| d.contains(t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
        if any {
            out.push((id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    // scores equal up to rounding are ties
    let mut groups: Vec<Vec<(String, f64)>> = Vec::new();
    for h in out {
        match groups.last_mut() {
            Some(g) if (g.last().unwrap().1 - h.1).abs() <= 1e-12 * h.1.abs().max(1.0) => g.push(h),
            _ => groups.push(vec![h]),
        }
    }
    groups
        .into_iter()
        .flat_map(|mut g| {
            g.sort_by(|a, b| a.0.cmp(&b.0));
            g
        })
        .collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Sum over query rows of the best cosine against any document row.
pub fn maxsim_brute(q: &[Vec<f64>], d: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for qr in q {
        let qu = unit(qr);
        let mut best = f64::NEG_INFINITY;
        for dr in d {
            let du = unit(dr);
            let mut dot = 0.0;
            for k in 0..qu.len() {
                dot += qu[k] * du[k];
            }
            if dot > best {
                best = dot;
            }
        }
        total += best;
    }
    total
}

/// Whole-word run containment on lowercased alphanumeric tokens.
pub fn contains_run(hay: &str, needle: &str) -> bool {
    let h = words(hay);
    let n = words(needle);
    !n.is_empty() && h.len() >= n.len() && (0..=h.len() - n.len()).any(|i| h[i..i + n.len()] == n[..])
}

pub fn forms(span: &MaskedSpan) -> Vec<String> {
    span.gold_surface.iter().chain(&span.gold_variants).cloned().collect()
}

fn squash(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn exact_brute(pred: &str, span: &MaskedSpan) -> bool {
    pred != "[UNANSWERED]" && forms(span).iter().any(|g| squash(g) == squash(pred))
}

/// Token recall as an exact fraction.
pub fn recall_brute(pred: &str, span: &MaskedSpan) -> (u64, u64) {
    if pred == "[UNANSWERED]" || span.gold_surface.is_none() {
        return (0, 1);
    }
    if exact_brute(pred, span) {
        return (1, 1);
    }
    let p: BTreeSet<String> = words(pred).into_iter().collect();
    if p.is_empty() {
        return (0, 1);
    }
    let best = forms(span)
        .iter()
        .map(|g| {
            let gs: BTreeSet<String> = words(g).into_iter().collect();
            p.intersection(&gs).count() as u64
        })
        .max()
        .unwrap_or(0);
    (best, p.len() as u64)
}

/// (MRR, acc@1, acc@5, acc@10) over ranked items, with ratios in [0, 1].
pub fn rank_brute(ranks: &[Option<usize>]) -> (u64, f64, f64, f64, f64) {
    let r: Vec<usize> = ranks.iter().flatten().copied().collect();
    if r.is_empty() {
        return (0, 0.0, 0.0, 0.0, 0.0);
    }
    let n = r.len() as f64;
    let at = |k: usize| r.iter().filter(|&&x| x <= k).count() as f64 / n;
    let mrr = r.iter().map(|&x| 1.0 / x as f64).sum::<f64>() / n;
    (r.len() as u64, mrr, at(1), at(5), at(10))
}

pub const VOCAB: &[&str] = &[
    "court", "applicant", "city", "held", "decision", "river", "north", "appeal", "officer", "january", "bank", "station",
    "report", "minister", "vote", "school", "museum", "harbour", "treaty", "bridge", "garden", "festival", "road", "party",
    "łódź", "zoë", "müller", "café", "2019", "17", "b12", "tribunal", "hospital", "island",
];

pub fn random_words<R: Rng>(rng: &mut R, n: usize) -> Vec<&'static str> {
    (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect()
}

/// One to `max_words` capitalized vocabulary words.
pub fn capitalized<R: Rng>(rng: &mut R, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    random_words(rng, n)
        .iter()
        .map(|w| {
            let mut c = w.chars();
            let first = c.next().unwrap();
            first.to_uppercase().chain(c).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Punctuated prose of `n` words with occasional line breaks and multibyte runs.
pub fn random_text<R: Rng>(rng: &mut R, n: usize) -> String {
    let mut s = String::new();
    for (i, w) in random_words(rng, n).iter().enumerate() {
        if i > 0 {
            s.push_str(match rng.random_range(0..12) {
                0 => ", ",
                1 => ". ",
                2 => "\n",
                3 => "  ",
                _ => " ",
            });
        }
        s.push_str(w);
    }
    s
}

/// A valid masked document with `n_spans` `[MASK]` spans and random golds.
pub fn random_masked<R: Rng>(rng: &mut R, doc_id: &str, n_spans: usize) -> MaskedDocument {
    let mut text = String::new();
    let mut spans = Vec::new();
    for i in 0..n_spans {
        let k = rng.random_range(0..20);
        text.push_str(&random_text(rng, k));
        text.push(' ');
        let start = text.chars().count();
        text.push_str("[MASK]");
        let gold = capitalized(rng, 3);
        let variants = if rng.random_bool(0.3) {
            vec![capitalized(rng, 1)]
        } else {
            vec![]
        };
        spans.push(MaskedSpan {
            span_id: format!("{doc_id}-s{i}"),
            start,
            end: start + 6,
            placeholder: "[MASK]".into(),
            category: ["PERSON", "LOC", "ORG", "DATETIME"][i % 4].into(),
            identifier_class: if i % 2 == 0 {
                IdentifierClass::Direct
            } else {
                IdentifierClass::Quasi
            },
            gold_surface: Some(gold),
            gold_variants: variants,
        });
        if rng.random_bool(0.8) {
            text.push(' ');
        }
    }
    let tail = rng.random_range(0..10);
    text.push_str(&random_text(rng, tail));
    MaskedDocument {
        doc_id: doc_id.into(),
        masked_text: text,
        dataset: None,
        identity: None,
        spans,
    }
}

/// Coverage, overlap and size of a chunking, checked code point by code point.
pub struct ChunkAudit {
    pub covered: bool,
    pub min_overlap: Option<usize>,
    pub max_overlap: Option<usize>,
    pub max_size: usize,
    pub text_matches: bool,
}

pub fn audit_chunks(text: &str, chunks: &[(usize, usize, String)]) -> ChunkAudit {
    let chars: Vec<char> = text.chars().collect();
    let mut hits = vec![0u32; chars.len()];
    let mut text_matches = true;
    for (s, e, t) in chunks {
        for h in &mut hits[*s..*e] {
            *h += 1;
        }
        text_matches &= chars[*s..*e].iter().collect::<String>() == *t;
    }
    let overlaps: Vec<usize> = chunks.windows(2).map(|w| w[0].1.saturating_sub(w[1].0)).collect();
    ChunkAudit {
        covered: hits.iter().all(|&h| h > 0),
        min_overlap: overlaps.iter().min().copied(),
        max_overlap: overlaps.iter().max().copied(),
        max_size: chunks.iter().map(|(s, e, _)| e - s).max().unwrap_or(0),
        text_matches,
    }
}

/// Population stdev of percentages, computed naively.
pub fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

pub fn counts<T: Ord + Clone>(xs: &[T]) -> BTreeMap<T, usize> {
    let mut m = BTreeMap::new();
    for x in xs {
        *m.entry(x.clone()).or_insert(0) += 1;
    }
    m
}
