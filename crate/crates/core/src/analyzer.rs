//! Text analyzer shared by the sparse index, query construction, relevance
//! checks, and the span metrics.
//!
//! A term is a maximal run of alphanumeric characters and combining marks,
//! NFC-normalized and lowercased. Everything else separates terms, so
//! pure-punctuation tokens never surface. Placeholder strings are
//! recognized literally and reported as [`TokenKind::Placeholder`]; they are
//! never terms. There is no stemming and no stopword list.

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Mask token used in dense queries and infilling prompts.
pub const MASK_TOKEN: &str = "[MASK]";
/// Neutral stand-in for other unresolved spans inside a query window.
pub const UNK_TOKEN: &str = "[UNK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    Placeholder,
}

/// A token with its code-point range in the analyzed text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub term: String,
    pub start: usize,
    pub end: usize,
    pub kind: TokenKind,
}

fn is_term_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

fn normalize_term(raw: &str) -> String {
    raw.nfc().collect::<String>().to_lowercase()
}

/// Terms of `text`, in order, with code-point offsets.
pub fn word_tokens(text: &str) -> Vec<Token> {
    word_tokens_from(text, 0)
}

fn word_tokens_from(text: &str, base: usize) -> Vec<Token> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut cp = 0;
    for c in text.chars() {
        if is_term_char(c) {
            if current.is_empty() {
                start = cp;
            }
            current.push(c);
        } else if !current.is_empty() {
            out.push(Token {
                term: normalize_term(&current),
                start: base + start,
                end: base + cp,
                kind: TokenKind::Word,
            });
            current.clear();
        }
        cp += 1;
    }
    if !current.is_empty() {
        out.push(Token {
            term: normalize_term(&current),
            start: base + start,
            end: base + cp,
            kind: TokenKind::Word,
        });
    }
    out
}

/// Terms only, as owned strings.
pub fn terms(text: &str) -> Vec<String> {
    word_tokens(text).into_iter().map(|t| t.term).collect()
}

/// Analyzer-normalized form used for relevance substring checks: terms
/// joined by single spaces.
pub fn normalized(text: &str) -> String {
    terms(text).join(" ")
}

/// Does `haystack` contain `needle` as a contiguous run of whole terms?
///
/// Both sides are analyzer-normalized first, so the check is case-insensitive
/// and ignores punctuation. A needle with no terms never matches.
pub fn contains_terms(haystack_normalized: &str, needle: &str) -> bool {
    let needle = normalized(needle);
    contains_normalized(haystack_normalized, &needle)
}

/// As [`contains_terms`] with both sides already normalized.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() || haystack.len() < needle.len() {
        return false;
    }
    let hb = haystack.as_bytes();
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let s = from + pos;
        let e = s + needle.len();
        let left_ok = s == 0 || hb[s - 1] == b' ';
        let right_ok = e == hb.len() || hb[e] == b' ';
        if left_ok && right_ok {
            return true;
        }
        // advance past this match start; the next char boundary follows
        from = s + haystack[s..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Tokenizer that recognizes a fixed set of placeholder strings.
#[derive(Debug, Clone)]
pub struct Analyzer {
    placeholders: Vec<String>,
}

impl Default for Analyzer {
    fn default() -> Self {
        Self::new([MASK_TOKEN, UNK_TOKEN])
    }
}

impl Analyzer {
    pub fn new<I, S>(placeholders: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut placeholders: Vec<String> = placeholders
            .into_iter()
            .map(Into::into)
            .filter(|p| !p.is_empty())
            .collect();
        // longest first so overlapping placeholder strings resolve greedily
        placeholders.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        placeholders.dedup();
        Self { placeholders }
    }

    /// Adds a corpus-specific placeholder.
    pub fn with_placeholder(mut self, placeholder: &str) -> Self {
        let mut all = std::mem::take(&mut self.placeholders);
        all.push(placeholder.to_string());
        Self::new(all)
    }

    pub fn placeholders(&self) -> &[String] {
        &self.placeholders
    }

    /// All tokens, placeholders included (each counts as one token).
    pub fn tokens(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        let mut gap_start_byte = 0;
        let mut gap_start_cp = 0;
        let mut cp = 0;
        let mut iter = text.char_indices().peekable();
        while let Some(&(b, _)) = iter.peek() {
            let hit = self
                .placeholders
                .iter()
                .find(|p| text[b..].starts_with(p.as_str()));
            if let Some(p) = hit {
                out.extend(word_tokens_from(&text[gap_start_byte..b], gap_start_cp));
                let len = p.chars().count();
                out.push(Token {
                    term: p.clone(),
                    start: cp,
                    end: cp + len,
                    kind: TokenKind::Placeholder,
                });
                for _ in 0..len {
                    iter.next();
                }
                cp += len;
                gap_start_byte = iter.peek().map_or(text.len(), |&(nb, _)| nb);
                gap_start_cp = cp;
            } else {
                iter.next();
                cp += 1;
            }
        }
        out.extend(word_tokens_from(&text[gap_start_byte..], gap_start_cp));
        out
    }

    /// Index terms: word tokens with placeholders dropped.
    pub fn index_terms(&self, text: &str) -> Vec<String> {
        self.tokens(text)
            .into_iter()
            .filter(|t| t.kind == TokenKind::Word)
            .map(|t| t.term)
            .collect()
    }

    /// Token count including placeholders.
    pub fn count(&self, text: &str) -> usize {
        self.tokens(text).len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_and_drops_punctuation() {
        assert_eq!(terms("The J.F.K. -- airport!"), ["the", "j", "f", "k", "airport"]);
        assert_eq!(normalized("  Dariusz   PIĄTKIEWICZ, "), "dariusz piątkiewicz");
    }

    #[test]
    fn combining_marks_stay_inside_terms() {
        // "é" spelled as e + U+0301 normalizes to the precomposed form
        let decomposed = "Caf\u{65}\u{301} noir";
        assert_eq!(terms(decomposed), ["café", "noir"]);
    }

    #[test]
    fn placeholders_are_single_tokens_and_not_terms() {
        let a = Analyzer::default();
        let toks = a.tokens("lives in [MASK], near [UNK].");
        let kinds: Vec<_> = toks.iter().map(|t| t.kind).collect();
        assert_eq!(
            kinds,
            [
                TokenKind::Word,
                TokenKind::Word,
                TokenKind::Placeholder,
                TokenKind::Word,
                TokenKind::Placeholder
            ]
        );
        assert_eq!(toks[2].start, 9);
        assert_eq!(toks[2].end, 15);
        assert_eq!(a.index_terms("a [MASK] b"), ["a", "b"]);
    }

    #[test]
    fn custom_placeholder_is_recognized() {
        let a = Analyzer::default().with_placeholder("***");
        assert_eq!(a.index_terms("born in *** in 1950"), ["born", "in", "in", "1950"]);
        assert_eq!(a.count("born in *** in 1950"), 5);
    }

    #[test]
    fn term_containment_respects_boundaries() {
        let hay = normalized("Aachen is the westernmost city in Germany");
        assert!(contains_terms(&hay, "aachen"));
        assert!(contains_terms(&hay, "City in GERMANY."));
        assert!(!contains_terms(&hay, "Aach"));
        assert!(!contains_terms(&hay, "..."));
        assert!(contains_normalized("j f k", "j f k"));
        assert!(!contains_normalized("j f kennedy", "j f k"));
    }
}
