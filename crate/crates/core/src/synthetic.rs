//! Seeded synthetic corpora for tests, benchmarks and demos.
//!
//! Every target gets an unmasked original (so L3/L4 differ), background
//! documents are drawn from a shared filler lexicon, and a configurable share
//! of targets has one fact repeated in a background document. Some
//! organisations and places recur across targets with a fixed phrasing, the
//! way related judgments cite the same court or city, so other targets'
//! originals carry usable knowledge.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, CorpusError, Dataset, Document, IdentifierClass, MaskedDocument, MaskedSpan, DEFAULT_PLACEHOLDER};
use crate::text::cp_len;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub targets: usize,
    pub background: usize,
    pub min_spans: usize,
    pub max_spans: usize,
    /// Filler words per sentence.
    pub sentence_words: (usize, usize),
    /// Filler sentences between entity sentences.
    pub padding_sentences: (usize, usize),
    /// Share of targets with one fact repeated in a background document.
    pub leak_fraction: f64,
    /// Chance that an ORG or LOC span uses a recurring entity.
    pub shared_fraction: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            targets: 50,
            background: 50,
            min_spans: 2,
            max_spans: 4,
            sentence_words: (6, 12),
            padding_sentences: (0, 1),
            leak_fraction: 0.3,
            shared_fraction: 0.7,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub documents: Vec<Document>,
    pub masked: Vec<MaskedDocument>,
}

impl Fixture {
    pub fn corpus(&self) -> Result<Corpus, CorpusError> {
        Corpus::from_records(self.documents.clone(), self.masked.clone())
    }

    /// JSONL lines in the ingest format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.documents {
            out.push_str(&serde_json::to_string(d).expect("serializes"));
            out.push('\n');
        }
        for m in &self.masked {
            out.push_str(&serde_json::to_string(m).expect("serializes"));
            out.push('\n');
        }
        out
    }
}

const CONSONANTS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "br", "tr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const MONTHS: &[&str] = &[
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December",
];

/// Source of fresh pseudo-words that never repeat.
pub struct WordFactory {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl WordFactory {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: HashSet::new(),
        }
    }

    pub fn word(&mut self, syllables: usize) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(CONSONANTS.choose(&mut self.rng).expect("non-empty"));
                w.push_str(VOWELS.choose(&mut self.rng).expect("non-empty"));
            }
            if self.rng.random_bool(0.5) {
                w.push_str(CONSONANTS.choose(&mut self.rng).expect("non-empty"));
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    pub fn name(&mut self) -> String {
        capitalize(&self.word(3))
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Filler text made of random lexicon words.
pub fn filler_sentence(rng: &mut impl Rng, lexicon: &[String], words: (usize, usize)) -> String {
    let n = rng.random_range(words.0..=words.1.max(words.0));
    let mut ws: Vec<&str> = (0..n).map(|_| lexicon.choose(rng).expect("lexicon").as_str()).collect();
    if ws.is_empty() {
        ws.push(lexicon.choose(rng).expect("lexicon"));
    }
    let mut s = capitalize(ws[0]);
    for w in &ws[1..] {
        s.push(' ');
        s.push_str(w);
    }
    s.push('.');
    s
}

struct Builder {
    masked: String,
    original: String,
    spans: Vec<MaskedSpan>,
    sentences: Vec<String>,
}

impl Builder {
    fn text(&mut self, s: &str) {
        self.masked.push_str(s);
        self.original.push_str(s);
    }

    fn entity(&mut self, id: String, gold: &str, variants: Vec<String>, category: &str, class: IdentifierClass) {
        let start = cp_len(&self.masked);
        self.masked.push_str(DEFAULT_PLACEHOLDER);
        self.original.push_str(gold);
        self.spans.push(MaskedSpan {
            span_id: id,
            start,
            end: start + cp_len(DEFAULT_PLACEHOLDER),
            placeholder: DEFAULT_PLACEHOLDER.into(),
            category: category.into(),
            identifier_class: class,
            gold_surface: Some(gold.into()),
            gold_variants: variants,
        });
    }
}

/// Builds a fixture. Identical specs give identical fixtures.
pub fn generate(spec: &FixtureSpec) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut words = WordFactory::new(spec.seed ^ 0x5eed);
    let lexicon: Vec<String> = (0..400).map(|i| words.word(1 + i % 3)).collect();
    let mut documents = Vec::new();
    let mut masked = Vec::new();
    let mut leaks: Vec<String> = Vec::new();
    // (lead-in phrase, entity, category)
    let shared: Vec<(String, String, &str)> = (0..(spec.targets / 4).max(2))
        .map(|i| {
            let lead = filler_sentence(&mut rng, &lexicon, (6, 8));
            let lead = lead.trim_end_matches('.').to_string();
            if i % 2 == 0 {
                (lead, format!("{} Institute", words.name()), "ORG")
            } else {
                (lead, words.name(), "LOC")
            }
        })
        .collect();

    for t in 0..spec.targets {
        let doc_id = format!("t{t:04}");
        let person = format!("{} {}", words.name(), words.name());
        let mut b = Builder {
            masked: String::new(),
            original: String::new(),
            spans: Vec::new(),
            sentences: Vec::new(),
        };
        let n_spans = rng.random_range(spec.min_spans..=spec.max_spans.max(spec.min_spans));
        for k in 0..n_spans {
            for _ in 0..rng.random_range(spec.padding_sentences.0..=spec.padding_sentences.1) {
                let s = filler_sentence(&mut rng, &lexicon, spec.sentence_words);
                b.text(&s);
                b.text(" ");
            }
            let before = filler_sentence(&mut rng, &lexicon, (spec.sentence_words.0 / 2 + 1, spec.sentence_words.1 / 2 + 1));
            let mut before = before.trim_end_matches('.').to_string();
            let after = filler_sentence(&mut rng, &lexicon, (2, 4)).to_lowercase();
            let kind = if k == 0 { 0 } else { rng.random_range(0..5) };
            let recurring = matches!(kind, 1 | 2) && rng.random_bool(spec.shared_fraction.clamp(0.0, 1.0));
            let (gold, variants, category, class) = match kind {
                0 => (person.clone(), vec![], "PERSON", IdentifierClass::Direct),
                1 | 2 if recurring => {
                    let (lead, name, cat) = shared.choose(&mut rng).expect("non-empty pool");
                    before = lead.clone();
                    (name.clone(), vec![], *cat, IdentifierClass::Quasi)
                }
                1 => (format!("{} {}", words.name(), "Institute"), vec![], "ORG", IdentifierClass::Quasi),
                2 => (words.name(), vec![], "LOC", IdentifierClass::Quasi),
                3 => {
                    let d = rng.random_range(1..=28);
                    let m = MONTHS.choose(&mut rng).expect("months");
                    let y = rng.random_range(1950..2020);
                    (format!("{d} {m} {y}"), vec![format!("{m} {d}, {y}")], "DATETIME", IdentifierClass::Quasi)
                }
                _ => {
                    let n = rng.random_range(10000..99999);
                    let y = rng.random_range(90..100);
                    (format!("{n}/{y}"), vec![format!("no. {n}/{y}")], "CODE", IdentifierClass::Direct)
                }
            };
            let sentence_start = b.original.len();
            b.text(&before);
            b.text(" ");
            b.entity(format!("{doc_id}-s{k}"), &gold, variants, category, class);
            b.text(" ");
            b.text(&after);
            b.sentences.push(b.original[sentence_start..].to_string());
            if k + 1 < n_spans {
                b.text(" ");
            }
        }
        if rng.random_bool(spec.leak_fraction.clamp(0.0, 1.0)) {
            leaks.push(b.sentences.choose(&mut rng).expect("at least one sentence").clone());
        }
        documents.push(Document {
            doc_id: format!("{doc_id}-orig"),
            text: b.original,
            dataset: Dataset::Tab,
            identity: Some(person.clone()),
            is_original_of: Some(doc_id.clone()),
        });
        masked.push(MaskedDocument {
            doc_id,
            masked_text: b.masked,
            dataset: Some(Dataset::Tab),
            identity: Some(person),
            spans: b.spans,
        });
    }

    for i in 0..spec.background.max(leaks.len()) {
        let mut text = String::new();
        let n = rng.random_range(2..6);
        for j in 0..n {
            if j > 0 {
                text.push(' ');
            }
            text.push_str(&filler_sentence(&mut rng, &lexicon, spec.sentence_words));
        }
        if let Some(fact) = leaks.get(i) {
            text.push(' ');
            text.push_str(fact);
        }
        documents.push(Document {
            doc_id: format!("bg{i:04}"),
            text,
            dataset: Dataset::Wikipedia,
            identity: None,
            is_original_of: None,
        });
    }
    Fixture { documents, masked }
}
