//! Documents, masked documents, and knowledge bases.
//!
//! A corpus file is JSONL. A record carrying `masked_text` is a
//! [`MaskedDocument`]; any other record is a background [`Document`].
//! Span offsets are code-point offsets into `masked_text`, end exclusive.

mod kb;
mod store;

pub use kb::{assemble_kb, KnowledgeBase, KnowledgeLevel, LevelSets};
pub use store::{ingest_corpus, Corpus, CorpusFormat, CorpusHandle, IngestOptions, StoreManifest};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::text::{cp_len, cp_slice, CharIndex};

/// Default placeholder for masked spans.
pub const DEFAULT_PLACEHOLDER: &str = "[MASK]";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate doc_id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` has empty text")]
    EmptyText(String),
    #[error("document `{doc_id}` span `{span_id}`: expected placeholder {expected:?} at [{start}, {end}) but found {found:?}")]
    OffsetMismatch {
        doc_id: String,
        span_id: String,
        start: usize,
        end: usize,
        expected: String,
        found: String,
    },
    #[error("document `{doc_id}` span `{span_id}`: range [{start}, {end}) invalid for text of length {len}")]
    SpanOutOfBounds {
        doc_id: String,
        span_id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("document `{doc_id}` span `{span_id}` overlaps or precedes the previous span")]
    SpanOrder { doc_id: String, span_id: String },
    #[error("document `{doc_id}` has duplicate span_id `{span_id}`")]
    DuplicateSpanId { doc_id: String, span_id: String },
    #[error("document `{doc_id}` span `{span_id}`: identifier class `{class}` is only valid for TAB-style inputs")]
    IdentifierClass {
        doc_id: String,
        span_id: String,
        class: IdentifierClass,
    },
    #[error("document `{doc_id}` is_original_of `{target}`, which is not a masked document in this corpus")]
    DanglingOriginal { doc_id: String, target: String },
    #[error("unsupported corpus format `{0}`")]
    UnsupportedFormat(String),
    #[error("unknown knowledge level `{0}` (expected L1, L2, L3 or L4)")]
    UnknownLevel(String),
    #[error("unknown masked document `{0}`")]
    UnknownTarget(String),
    #[error("corpus store {path}: {message}")]
    Store { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Wikipedia,
    Tab,
    Clinical,
    #[default]
    Other,
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::Wikipedia => "wikipedia",
            Dataset::Tab => "tab",
            Dataset::Clinical => "clinical",
            Dataset::Other => "other",
        })
    }
}

impl FromStr for Dataset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wikipedia" => Ok(Dataset::Wikipedia),
            "tab" => Ok(Dataset::Tab),
            "clinical" => Ok(Dataset::Clinical),
            "other" => Ok(Dataset::Other),
            _ => Err(format!("unknown dataset `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IdentifierClass {
    Direct,
    Quasi,
    #[default]
    Unknown,
}

impl fmt::Display for IdentifierClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdentifierClass::Direct => "direct",
            IdentifierClass::Quasi => "quasi",
            IdentifierClass::Unknown => "unknown",
        })
    }
}

/// A background-knowledge document, or the unmasked original of a masked one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub dataset: Dataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_original_of: Option<String>,
}

/// Standoff record of one masked span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskedSpan {
    pub span_id: String,
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub placeholder: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub identifier_class: IdentifierClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_surface: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold_variants: Vec<String>,
}

impl MaskedSpan {
    /// Gold surface followed by its variants.
    pub fn gold_forms(&self) -> impl Iterator<Item = &str> {
        self.gold_surface
            .iter()
            .map(String::as_str)
            .chain(self.gold_variants.iter().map(String::as_str))
    }
}

/// A de-identified text with standoff span records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskedDocument {
    pub doc_id: String,
    pub masked_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Dataset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    #[serde(default)]
    pub spans: Vec<MaskedSpan>,
}

impl MaskedDocument {
    /// Checks span offsets, ordering, placeholders and span id uniqueness.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let idx = CharIndex::new(&self.masked_text);
        let len = idx.len();
        let mut seen = std::collections::HashSet::new();
        let mut prev_end = 0usize;
        for span in &self.spans {
            if !seen.insert(span.span_id.as_str()) {
                return Err(CorpusError::DuplicateSpanId {
                    doc_id: self.doc_id.clone(),
                    span_id: span.span_id.clone(),
                });
            }
            if span.start >= span.end || span.end > len {
                return Err(CorpusError::SpanOutOfBounds {
                    doc_id: self.doc_id.clone(),
                    span_id: span.span_id.clone(),
                    start: span.start,
                    end: span.end,
                    len,
                });
            }
            if span.start < prev_end {
                return Err(CorpusError::SpanOrder {
                    doc_id: self.doc_id.clone(),
                    span_id: span.span_id.clone(),
                });
            }
            prev_end = span.end;
            let found = idx.slice(span.start, span.end);
            if found != span.placeholder {
                return Err(CorpusError::OffsetMismatch {
                    doc_id: self.doc_id.clone(),
                    span_id: span.span_id.clone(),
                    start: span.start,
                    end: span.end,
                    expected: span.placeholder.clone(),
                    found: found.to_string(),
                });
            }
            if span.identifier_class != IdentifierClass::Unknown
                && self.dataset.is_some_and(|d| d != Dataset::Tab)
            {
                return Err(CorpusError::IdentifierClass {
                    doc_id: self.doc_id.clone(),
                    span_id: span.span_id.clone(),
                    class: span.identifier_class,
                });
            }
        }
        Ok(())
    }

    /// Replaces each placeholder with its gold surface, last span first.
    /// `None` when any span lacks a gold surface.
    pub fn reconstruct_with_gold(&self) -> Option<String> {
        let mut text = self.masked_text.clone();
        for span in self.spans.iter().rev() {
            let gold = span.gold_surface.as_deref()?;
            text = crate::text::splice_cp(&text, span.start, span.end, gold)?;
        }
        Some(text)
    }

    pub fn span(&self, span_id: &str) -> Option<&MaskedSpan> {
        self.spans.iter().find(|s| s.span_id == span_id)
    }

    pub fn text_len(&self) -> usize {
        cp_len(&self.masked_text)
    }

    /// Placeholder text at the span's stated offsets.
    pub fn text_at(&self, span: &MaskedSpan) -> Option<&str> {
        cp_slice(&self.masked_text, span.start, span.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(id: &str, start: usize, end: usize) -> MaskedSpan {
        MaskedSpan {
            span_id: id.into(),
            start,
            end,
            placeholder: DEFAULT_PLACEHOLDER.into(),
            category: "LOC".into(),
            identifier_class: IdentifierClass::Unknown,
            gold_surface: None,
            gold_variants: vec![],
        }
    }

    #[test]
    fn validate_rejects_offset_mismatch() {
        let md = MaskedDocument {
            doc_id: "d".into(),
            masked_text: "lives in [MASK].".into(),
            dataset: None,
            identity: None,
            spans: vec![span("s1", 8, 14)],
        };
        match md.validate() {
            Err(CorpusError::OffsetMismatch { span_id, .. }) => assert_eq!(span_id, "s1"),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_overlap_and_bounds() {
        let mut md = MaskedDocument {
            doc_id: "d".into(),
            masked_text: "[MASK] [MASK]".into(),
            dataset: None,
            identity: None,
            spans: vec![span("b", 7, 13), span("a", 0, 6)],
        };
        assert!(matches!(md.validate(), Err(CorpusError::SpanOrder { .. })));
        md.spans = vec![span("a", 0, 6), span("b", 7, 14)];
        assert!(matches!(md.validate(), Err(CorpusError::SpanOutOfBounds { .. })));
        md.spans = vec![span("a", 0, 6), span("a", 7, 13)];
        assert!(matches!(md.validate(), Err(CorpusError::DuplicateSpanId { .. })));
    }

    #[test]
    fn quasi_class_requires_tab() {
        let mut s = span("s", 0, 6);
        s.identifier_class = IdentifierClass::Quasi;
        let mut md = MaskedDocument {
            doc_id: "d".into(),
            masked_text: "[MASK] ok".into(),
            dataset: Some(Dataset::Wikipedia),
            identity: None,
            spans: vec![s],
        };
        assert!(matches!(md.validate(), Err(CorpusError::IdentifierClass { .. })));
        md.dataset = Some(Dataset::Tab);
        md.validate().unwrap();
    }

    #[test]
    fn reconstruct_in_reverse_order() {
        let mut a = span("a", 0, 6);
        a.gold_surface = Some("Dariusz Piątkiewicz".into());
        let mut b = span("b", 11, 17);
        b.gold_surface = Some("14 June 2000".into());
        let md = MaskedDocument {
            doc_id: "d".into(),
            masked_text: "[MASK], on [MASK].".into(),
            dataset: None,
            identity: None,
            spans: vec![a, b],
        };
        md.validate().unwrap();
        assert_eq!(
            md.reconstruct_with_gold().unwrap(),
            "Dariusz Piątkiewicz, on 14 June 2000."
        );
    }
}
