mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reident::analyzer::{self, Analyzer, MASK_TOKEN, UNK_TOKEN};
use reident::chunk_query::pairs::label_for;
use reident::chunk_query::{build_query, chunk_text, ChunkConfig, PairLabel, SpanSlot};
use reident::corpus::{Corpus, KnowledgeLevel, LevelSets};
use reident::dense::{maxsim, TokenEmbeddings};
use reident::infill::{postprocess_hypothesis, schedule_spans};
use reident::metrics::{exact_match, token_recall, FracSum};
use reident::ranker::{built_in_lexical_score, rank_identities, CandidateList, CandidateSource, LexicalScorer};
use reident::sparse::{InvertedIndex, ScoringParams};
use reident::synthetic::{generate, FixtureSpec};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn corpus_docs(r: &mut ChaCha8Rng, n: usize) -> Vec<(String, String)> {
    (0..n)
        .map(|i| {
            let len = r.random_range(1..60);
            (format!("d{i:03}"), random_text(r, len))
        })
        .collect()
}

fn index(docs: &[(String, String)]) -> InvertedIndex {
    InvertedIndex::from_texts(
        docs.iter().map(|(a, b)| (a.as_str(), b.as_str())),
        &Analyzer::default(),
        &ScoringParams::default(),
    )
    .unwrap()
}

fn rows(r: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
            v[0] += 0.01; // keep away from the zero vector
            v
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chunks_cover_and_overlap(seed: u64, size in 40usize..700, overlap_frac in 0.05f64..0.9, slack in 0usize..=50) {
        let mut r = rng(seed);
        let overlap = ((size as f64 * overlap_frac) as usize).clamp(1, size - 1);
        let cfg = ChunkConfig { size, overlap, slack };
        let n = r.random_range(0..400);
        let text = random_text(&mut r, n);
        let chunks = chunk_text("d", &text, &cfg).unwrap();
        let spans: Vec<(usize, usize, String)> = chunks.iter().map(|c| (c.start, c.end, c.text.clone())).collect();
        let a = audit_chunks(&text, &spans);
        prop_assert!(a.covered);
        prop_assert!(a.text_matches);
        prop_assert!(a.max_size <= size);
        if let (Some(lo), Some(hi)) = (a.min_overlap, a.max_overlap) {
            prop_assert!(hi <= overlap, "overlap {hi} > {overlap}");
            prop_assert!(lo + slack >= overlap, "overlap {lo} < {overlap} - {slack}");
        }
        for (i, c) in chunks.iter().enumerate() {
            prop_assert_eq!(&c.chunk_id, &format!("d#{i}"));
        }
    }

    #[test]
    fn query_has_one_mask_within_budget(seed: u64, budget in 1usize..160) {
        let mut r = rng(seed);
        let n_spans = r.random_range(1..6);
        let md = random_masked(&mut r, "q", n_spans);
        let slots: Vec<SpanSlot> = md.spans.iter().map(|s| SpanSlot {
            span_id: s.span_id.clone(), start: s.start, end: s.end, placeholder: s.placeholder.clone(),
        }).collect();
        let a = Analyzer::default();
        for target in &slots {
            let q = build_query(&md.masked_text, target, &slots, &a, budget).unwrap();
            prop_assert_eq!(q.text.matches(MASK_TOKEN).count(), 1, "{}", q.text);
            prop_assert!(a.count(&q.text) <= budget);
        }
    }

    #[test]
    fn bm25_matches_brute_force(seed: u64, n_docs in 1usize..40) {
        let mut r = rng(seed);
        let docs = corpus_docs(&mut r, n_docs);
        let idx = index(&docs);
        for _ in 0..5 {
            let qn = r.random_range(1..8);
            let q = random_words(&mut r, qn).join(" ");
            let want = bm25_brute(&docs, &q, 1.5, 0.75);
            let got = idx.retrieve_docs(&q, usize::MAX);
            prop_assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                prop_assert_eq!(&g.target_id, &w.0, "{:?} vs {:?}", got.iter().map(|h| (&h.target_id, h.score)).collect::<Vec<_>>(), want);
                prop_assert!((g.score - w.1).abs() <= 1e-9);
            }
            for n in [0, 1, 3, 10] {
                let short = idx.retrieve_docs(&q, n);
                prop_assert_eq!(&short[..], &got[..n.min(got.len())]);
            }
        }
    }

    #[test]
    fn unrelated_document_keeps_oracle_order(seed: u64) {
        let mut r = rng(seed);
        let mut docs = corpus_docs(&mut r, 20);
        let q = random_words(&mut r, 3).join(" ");
        docs.push(("zz-unrelated".into(), "qwerty asdfgh zxcvbn ".repeat(r.random_range(1..20))));
        let got: Vec<String> = index(&docs).retrieve_docs(&q, 100).into_iter().map(|h| h.target_id).collect();
        let want: Vec<String> = bm25_brute(&docs, &q, 1.5, 0.75).into_iter().map(|h| h.0).collect();
        prop_assert!(!got.contains(&"zz-unrelated".to_string()));
        prop_assert_eq!(got, want);
    }

    #[test]
    fn maxsim_properties(seed: u64, nq in 1usize..6, nd in 1usize..10, dim in 2usize..12) {
        let mut r = rng(seed);
        let q = rows(&mut r, nq, dim);
        let mut d = rows(&mut r, nd, dim);
        let qe = TokenEmbeddings::from_rows("q", &q).unwrap();
        let s = maxsim(&qe, &TokenEmbeddings::from_rows("d", &d).unwrap()).unwrap();
        prop_assert!((s - maxsim_brute(&q, &d)).abs() <= 1e-12);
        prop_assert!(s.abs() <= nq as f64 + 1e-9);
        let full = s;
        d.shuffle(&mut r);
        prop_assert_eq!(maxsim(&qe, &TokenEmbeddings::from_rows("d", &d).unwrap()).unwrap(), full);
        let keep = r.random_range(1..=nd);
        let sub = TokenEmbeddings::from_rows("s", &d[..keep]).unwrap();
        prop_assert!(maxsim(&qe, &sub).unwrap() <= full);
        let mut with_copy = d.clone();
        with_copy.extend(q.iter().cloned());
        let exact = maxsim(&qe, &TokenEmbeddings::from_rows("c", &with_copy).unwrap()).unwrap();
        prop_assert!((exact - nq as f64).abs() <= 1e-9);
    }

    #[test]
    fn gold_rank_ignores_candidate_order(seed: u64, n in 2usize..30) {
        let mut r = rng(seed);
        let mut names: Vec<String> = (0..n).map(|_| capitalized(&mut r, 3)).collect();
        names.sort();
        names.dedup();
        let gold = names[r.random_range(0..names.len())].clone();
        let tl = r.random_range(0..50);
        let text = format!("{} {}", random_text(&mut r, tl), if r.random_bool(0.5) { gold.as_str() } else { "" });
        let base = rank_identities("d", &text, &CandidateList::new(names.clone(), CandidateSource::UserSupplied).unwrap(), &LexicalScorer, Some(&gold)).unwrap();
        for _ in 0..5 {
            names.shuffle(&mut r);
            let list = CandidateList::new(names.clone(), CandidateSource::UserSupplied).unwrap();
            let again = rank_identities("d", &text, &list, &LexicalScorer, Some(&gold)).unwrap();
            prop_assert_eq!(&again, &base);
        }
        prop_assert!(base.ranking.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
    }

    #[test]
    fn lexical_score_grows_with_mentions(seed: u64) {
        let mut r = rng(seed);
        let name = capitalized(&mut r, 3);
        let tl = r.random_range(0..40);
        let mut text = random_text(&mut r, tl);
        let mut last = built_in_lexical_score(&text, &name);
        for _ in 0..4 {
            text.push(' ');
            text.push_str(&name);
            let s = built_in_lexical_score(&text, &name);
            prop_assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn span_metrics_match_brute_force(seed: u64) {
        let mut r = rng(seed);
        let md = random_masked(&mut r, "m", 4);
        for s in &md.spans {
            let pred = match r.random_range(0..5) {
                0 => s.gold_surface.clone().unwrap().to_uppercase(),
                1 => "[UNANSWERED]".to_string(),
                2 => format!("  {}  ", s.gold_variants.first().cloned().unwrap_or_default()),
                _ => capitalized(&mut r, 4),
            };
            prop_assert_eq!(exact_match(&pred, s, false), exact_brute(&pred, s));
            let (n, d) = token_recall(&pred, s, false);
            let (bn, bd) = recall_brute(&pred, s);
            prop_assert_eq!(n * bd, bn * d, "{} vs {:?}", pred, s);
            prop_assert!(n <= d);
        }
    }

    #[test]
    fn fraction_sums_are_order_free(seed: u64, n in 1usize..200) {
        let mut r = rng(seed);
        let fr: Vec<(u64, u64)> = (0..n).map(|_| { let d = r.random_range(1..20); (r.random_range(0..=d), d) }).collect();
        let mut a = FracSum::new();
        fr.iter().for_each(|&(x, y)| a.add(x, y));
        let mut shuffled = fr.clone();
        shuffled.shuffle(&mut r);
        let cut = r.random_range(0..=n);
        let (mut left, mut right) = (FracSum::new(), FracSum::new());
        shuffled[..cut].iter().for_each(|&(x, y)| left.add(x, y));
        shuffled[cut..].iter().for_each(|&(x, y)| right.add(x, y));
        let mut lr = left.clone();
        lr.merge(&right);
        let mut rl = right;
        rl.merge(&left);
        prop_assert_eq!(&lr, &a);
        prop_assert_eq!(&rl, &a);
        prop_assert_eq!(lr.mean().unwrap().to_bits(), a.mean().unwrap().to_bits());
        let naive = fr.iter().map(|&(x, y)| x as f64 / y as f64).sum::<f64>() / n as f64;
        prop_assert!((a.mean().unwrap() - naive).abs() <= 1e-12);
    }

    #[test]
    fn schedules_are_seeded_permutations(seed: u64, n in 0usize..12) {
        let mut r = rng(seed);
        let md = random_masked(&mut r, "s", n);
        let a = schedule_spans(&md, seed);
        prop_assert_eq!(&a, &schedule_spans(&md, seed));
        let want: BTreeSet<&str> = md.spans.iter().map(|s| s.span_id.as_str()).collect();
        let got: BTreeSet<&str> = a.iter().map(String::as_str).collect();
        prop_assert_eq!(a.len(), n);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn hypotheses_never_leak_placeholders(raw in "[\\[\\]A-Za-z \"'\n.]{0,40}", extra in prop::sample::select(vec!["[MASK]", "[UNK]", "[PERSON]", "[REDACTED]"])) {
        for input in [raw.clone(), format!("[{extra}]{raw}"), format!("\"{raw}\""), raw.replace('A', "[MASK]").replace('B', extra)] {
            let h = postprocess_hypothesis(&input, &[extra]);
            prop_assert!(!h.is_empty());
            prop_assert!(!h.contains(MASK_TOKEN) && !h.contains(UNK_TOKEN) && !h.contains(extra), "{:?} -> {:?}", input, h);
            prop_assert!(!h.contains('\n'));
        }
    }

    #[test]
    fn pair_labels_match_word_runs(seed: u64) {
        let mut r = rng(seed);
        let md = random_masked(&mut r, "p", 1);
        let span = &md.spans[0];
        let pl = r.random_range(0..30);
        let mut passage = random_text(&mut r, pl);
        if r.random_bool(0.4) {
            let f = forms(span);
            passage.push_str(&format!(" the {}.", f[r.random_range(0..f.len())].to_lowercase()));
        }
        let want = forms(span).iter().any(|g| contains_run(&passage, g));
        prop_assert_eq!(label_for(&passage, span) == PairLabel::Pos, want);
        prop_assert_eq!(analyzer::contains_terms(&analyzer::normalized(&passage), span.gold_surface.as_ref().unwrap()), contains_run(&passage, span.gold_surface.as_ref().unwrap()));
    }
}

#[test]
fn knowledge_levels_nest() {
    let fx = generate(&FixtureSpec {
        targets: 30,
        background: 20,
        ..FixtureSpec::default()
    });
    let corpus: Corpus = fx.corpus().unwrap();
    let levels = LevelSets::new(&corpus);
    for md in corpus.masked_documents() {
        let id = &md.doc_id;
        let kb = |l| levels.assemble(l, id, &corpus).unwrap();
        let eff = |l| kb(l).effective_documents().cloned().collect::<BTreeSet<String>>();
        let (l1, l2, l3, l4) = (eff(KnowledgeLevel::L1), eff(KnowledgeLevel::L2), eff(KnowledgeLevel::L3), eff(KnowledgeLevel::L4));
        assert!(l1.is_empty());
        assert!(l2.is_subset(&l3) && l3.is_subset(&l4));
        let diff: BTreeSet<String> = l4.difference(&l3).cloned().collect();
        let originals: BTreeSet<String> = corpus.originals_of(id).iter().cloned().collect();
        assert_eq!(diff, originals);
        assert!(!originals.is_empty());
    }
}
