use std::sync::atomic::{AtomicUsize, Ordering};

use reident::analyzer::{Analyzer, MASK_TOKEN};
use reident::backend::mock::OracleInfiller;
use reident::backend::{BackendError, InfillBackend, InfillCall, InfillCandidate, InfillResponse};
use reident::chunk_query::Chunk;
use reident::corpus::{assemble_kb, Corpus, Document, IdentifierClass, KnowledgeLevel, MaskedDocument, MaskedSpan};
use reident::infill::{
    infill_document, render_prompt, schedule_spans, Backends, InfillConfig, InfillMode, TranscriptCache, UNANSWERED,
};

fn chunk(t: &str) -> Chunk {
    Chunk {
        chunk_id: "c#0".into(),
        doc_id: "c".into(),
        start: 0,
        end: t.chars().count(),
        text: t.into(),
    }
}

#[test]
fn golden_no_retrieval_prompt() {
    let got = render_prompt("The applicant lives in the German city of [MASK].", &[], InfillMode::NoRetrieval).unwrap();
    assert_eq!(got, include_str!("fixtures/prompt_no_retrieval.txt"));
}

#[test]
fn golden_retrieval_prompt() {
    let passages = [
        chunk("Aachen is the westernmost city in Germany."),
        chunk("The city hosts the cathedral of Charlemagne."),
    ];
    let got = render_prompt(
        "The applicant lives in the German city of [MASK].",
        &passages,
        InfillMode::Retrieval,
    )
    .unwrap();
    assert_eq!(got, include_str!("fixtures/prompt_retrieval.txt"));
}

fn span(id: &str, start: usize, gold: &str) -> MaskedSpan {
    MaskedSpan {
        span_id: id.into(),
        start,
        end: start + MASK_TOKEN.chars().count(),
        placeholder: MASK_TOKEN.into(),
        category: "X".into(),
        identifier_class: IdentifierClass::Unknown,
        gold_surface: Some(gold.into()),
        gold_variants: vec![],
    }
}

fn corpus_with(md: MaskedDocument) -> Corpus {
    Corpus::from_records(
        [Document {
            doc_id: "bg".into(),
            text: "filler".into(),
            dataset: Default::default(),
            identity: None,
            is_original_of: None,
        }],
        [md],
    )
    .unwrap()
}

/// Answers `span_id` repeated a span-specific number of times.
struct Echo {
    calls: AtomicUsize,
}

impl InfillBackend for Echo {
    fn model_id(&self) -> &str {
        "echo"
    }
    fn infill(&self, call: &InfillCall<'_>) -> Result<InfillResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let n = call.span.span_id.len() % 4 + 1;
        Ok(InfillResponse {
            candidates: vec![InfillCandidate {
                text: vec![call.span.gold_surface.clone().unwrap(); n].join(" "),
                score: Some(0.5),
            }],
        })
    }
}

/// Returns the gold but always ranks it second.
struct SecondBest;

impl InfillBackend for SecondBest {
    fn model_id(&self) -> &str {
        "second"
    }
    fn infill(&self, call: &InfillCall<'_>) -> Result<InfillResponse, BackendError> {
        Ok(InfillResponse {
            candidates: vec![
                InfillCandidate {
                    text: "\"[MASK]\"".into(),
                    score: Some(0.9),
                },
                InfillCandidate {
                    text: call.span.gold_surface.clone().unwrap(),
                    score: Some(0.1),
                },
            ],
        })
    }
}

fn run(md: &MaskedDocument, backend: &dyn InfillBackend) -> reident::infill::InfillOutcome {
    let corpus = corpus_with(md.clone());
    let kb = assemble_kb(KnowledgeLevel::L1, &md.doc_id, &corpus).unwrap();
    let transcripts = TranscriptCache::in_memory();
    let b = Backends {
        infiller: backend,
        retrieval: None,
        transcripts: &transcripts,
    };
    infill_document(md, &kb, &InfillConfig::no_retrieval(3), &b, &Analyzer::default())
}

#[test]
fn zero_spans_leaves_text_alone() {
    let md = MaskedDocument {
        doc_id: "d".into(),
        masked_text: "Nothing masked here.".into(),
        dataset: None,
        identity: None,
        spans: vec![],
    };
    let out = run(&md, &OracleInfiller::new());
    assert!(out.error.is_none());
    assert_eq!(out.document.final_text, md.masked_text);
    assert!(out.document.results.is_empty());
    assert!(out.document.complete);
}

#[test]
fn gold_answers_reconstruct_the_original() {
    let md = MaskedDocument {
        doc_id: "d".into(),
        masked_text: "Born in [MASK].".into(),
        dataset: None,
        identity: None,
        spans: vec![span("a", 8, "Łódź")],
    };
    struct Gold;
    impl InfillBackend for Gold {
        fn model_id(&self) -> &str {
            "gold"
        }
        fn infill(&self, call: &InfillCall<'_>) -> Result<InfillResponse, BackendError> {
            Ok(InfillResponse {
                candidates: vec![InfillCandidate {
                    text: call.span.gold_surface.clone().unwrap(),
                    score: None,
                }],
            })
        }
    }
    let out = run(&md, &Gold);
    assert_eq!(out.document.final_text, md.reconstruct_with_gold().unwrap());
    assert_eq!(out.document.final_text, "Born in Łódź.");
}

#[test]
fn variable_length_hypotheses_keep_offsets_straight() {
    let text = "[MASK] wrote to [MASK] about [MASK] on Monday.";
    let md = MaskedDocument {
        doc_id: "d".into(),
        masked_text: text.into(),
        dataset: None,
        identity: None,
        spans: vec![span("a", 0, "Zoë"), span("bb", 16, "the Ministry"), span("ccc", 29, "a 2019 permit")],
    };
    let echo = Echo {
        calls: AtomicUsize::new(0),
    };
    let out = run(&md, &echo);
    assert!(out.error.is_none(), "{:?}", out.error);
    assert_eq!(echo.calls.load(Ordering::SeqCst), 3);
    assert_eq!(
        out.document.final_text,
        "Zoë Zoë wrote to the Ministry the Ministry the Ministry about a 2019 permit a 2019 permit a 2019 permit a 2019 permit on Monday."
    );
    let order: Vec<&str> = out.document.results.iter().map(|r| r.span_id.as_str()).collect();
    assert_eq!(order, schedule_spans(&md, out.document.schedule_seed));
    for (i, r) in out.document.results.iter().enumerate() {
        assert_eq!(r.order_index, i);
        assert!(r.passages_used.is_empty());
    }
}

#[test]
fn takes_the_top_candidate_and_never_substitutes_empty() {
    let md = MaskedDocument {
        doc_id: "d".into(),
        masked_text: "Seen in [MASK].".into(),
        dataset: None,
        identity: None,
        spans: vec![span("a", 8, "Oslo")],
    };
    let out = run(&md, &SecondBest);
    assert_eq!(out.document.results[0].hypothesis, UNANSWERED);
    assert_eq!(out.document.final_text, format!("Seen in {UNANSWERED}."));
    assert!(!out.document.final_text.contains(MASK_TOKEN));
}

#[test]
fn hard_failure_returns_partial_results() {
    let md = MaskedDocument {
        doc_id: "d".into(),
        masked_text: "[MASK] and [MASK] and [MASK].".into(),
        dataset: None,
        identity: None,
        spans: vec![span("a", 0, "x"), span("b", 11, "y"), span("c", 22, "z")],
    };
    let out = run(&md, &OracleInfiller::failing_after(2));
    assert!(out.error.is_some());
    assert!(!out.document.complete);
    assert_eq!(out.document.results.len(), 2);
    assert!(out.document.error.is_some());
    assert_eq!(out.document.final_text.matches(MASK_TOKEN).count(), 1);
}

#[test]
fn retrieval_mode_is_refused_at_l1() {
    let md = MaskedDocument {
        doc_id: "d".into(),
        masked_text: "In [MASK].".into(),
        dataset: None,
        identity: None,
        spans: vec![span("a", 3, "x")],
    };
    let corpus = corpus_with(md.clone());
    let kb = assemble_kb(KnowledgeLevel::L1, "d", &corpus).unwrap();
    let transcripts = TranscriptCache::in_memory();
    let oracle = OracleInfiller::new();
    let b = Backends {
        infiller: &oracle,
        retrieval: None,
        transcripts: &transcripts,
    };
    let cfg = InfillConfig::preset(reident::infill::InfillPreset::Glm1, 0);
    let out = infill_document(&md, &kb, &cfg, &b, &Analyzer::default());
    assert!(out.error.is_some());
    assert_eq!(oracle.calls(), 0);
}
