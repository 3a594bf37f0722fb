use serde::{Deserialize, Serialize};

use crate::analyzer::{Analyzer, TokenKind, MASK_TOKEN, UNK_TOKEN};
use crate::text::CharIndex;

pub const DEFAULT_TOKEN_BUDGET: usize = 128;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("span `{span_id}`: placeholder {placeholder:?} not found at tracked offset [{start}, {end}), found {found:?}")]
    PlaceholderMissing {
        span_id: String,
        placeholder: String,
        start: usize,
        end: usize,
        found: String,
    },
    #[error("token budget must be at least 1")]
    ZeroBudget,
}

/// Current location of a masked span inside a working text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanSlot {
    pub span_id: String,
    pub start: usize,
    pub end: usize,
    pub placeholder: String,
}

impl SpanSlot {
    /// Fails unless `text[start..end]` is the placeholder.
    pub fn check(&self, idx: &CharIndex<'_>) -> Result<(), QueryError> {
        let found = idx.slice(self.start, self.end);
        if self.end > idx.len() || found != self.placeholder {
            return Err(QueryError::PlaceholderMissing {
                span_id: self.span_id.clone(),
                placeholder: self.placeholder.clone(),
                start: self.start,
                end: self.end,
                found: found.to_string(),
            });
        }
        Ok(())
    }
}

/// A dense-retrieval query for one span: its local context with exactly
/// one `[MASK]` marking the span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskQuery {
    pub span_id: String,
    pub text: String,
    pub token_budget: usize,
}

/// Renders `[from, to)` of the working text with the target slot as
/// `[MASK]` and other unresolved slots as `[UNK]`. Slots that straddle the
/// window edges are pulled in whole. Stray literal `[MASK]` strings in the
/// text are neutralized to `[UNK]` so the target stays unique.
pub fn render_window(
    idx: &CharIndex<'_>,
    target: &SpanSlot,
    unresolved: &[SpanSlot],
    from: usize,
    to: usize,
) -> String {
    let mut slots: Vec<(&SpanSlot, bool)> = unresolved
        .iter()
        .filter(|s| s.span_id != target.span_id)
        .map(|s| (s, false))
        .chain(std::iter::once((target, true)))
        .collect();
    slots.sort_by_key(|(s, _)| s.start);

    let mut from = from.min(target.start);
    let mut to = to.max(target.end).min(idx.len());
    for (s, _) in &slots {
        if s.start < from && s.end > from {
            from = s.start;
        }
        if s.start < to && s.end > to {
            to = s.end;
        }
    }

    let mut out = String::new();
    let mut cursor = from;
    for (s, is_target) in slots {
        if s.end <= from || s.start >= to {
            continue;
        }
        out.push_str(&idx.slice(cursor, s.start).replace(MASK_TOKEN, UNK_TOKEN));
        out.push_str(if is_target { MASK_TOKEN } else { UNK_TOKEN });
        cursor = s.end;
    }
    out.push_str(&idx.slice(cursor, to).replace(MASK_TOKEN, UNK_TOKEN));
    out
}

/// Builds the mask-centred query for `target`.
///
/// Tokens are analyzer tokens; each placeholder counts as one. The window
/// grows symmetrically from the mask (the right side takes the odd token)
/// and spills to the other side once one side runs out of text.
pub fn build_query(
    current_text: &str,
    target: &SpanSlot,
    unresolved: &[SpanSlot],
    analyzer: &Analyzer,
    token_budget: usize,
) -> Result<MaskQuery, QueryError> {
    if token_budget == 0 {
        return Err(QueryError::ZeroBudget);
    }
    let idx = CharIndex::new(current_text);
    target.check(&idx)?;

    let mut slots: Vec<&SpanSlot> = unresolved
        .iter()
        .filter(|s| s.span_id != target.span_id)
        .chain(std::iter::once(target))
        .collect();
    slots.sort_by_key(|s| s.start);

    // (start, end, is_target) for every token, gaps tokenized separately
    let mut toks: Vec<(usize, usize, bool)> = Vec::new();
    let mut cursor = 0;
    for s in &slots {
        push_gap_tokens(&mut toks, &idx, analyzer, cursor, s.start);
        toks.push((s.start, s.end, s.span_id == target.span_id));
        cursor = s.end;
    }
    push_gap_tokens(&mut toks, &idx, analyzer, cursor, idx.len());

    let i = toks.iter().position(|t| t.2).expect("target token present");
    let side_budget = token_budget - 1;
    let left_avail = i;
    let right_avail = toks.len() - i - 1;
    let left = left_avail.min((side_budget / 2).max(side_budget.saturating_sub(right_avail)));
    let right = right_avail.min(side_budget - left);

    let from = toks[i - left].0;
    let to = toks[i + right].1;
    Ok(MaskQuery {
        span_id: target.span_id.clone(),
        text: render_window(&idx, target, unresolved, from, to),
        token_budget,
    })
}

fn push_gap_tokens(
    out: &mut Vec<(usize, usize, bool)>,
    idx: &CharIndex<'_>,
    analyzer: &Analyzer,
    from: usize,
    to: usize,
) {
    if from >= to {
        return;
    }
    for t in analyzer.tokens(idx.slice(from, to)) {
        debug_assert!(t.kind == TokenKind::Word || t.kind == TokenKind::Placeholder);
        out.push((from + t.start, from + t.end, false));
    }
}
