//! Code-point offset helpers.
//!
//! Every offset stored in a corpus record or a chunk counts Unicode scalar
//! values, never bytes. These helpers translate between the two.

/// Number of Unicode scalar values in `s`.
pub fn cp_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte position of the code point at `cp`, or `None` when `cp` is past the end.
/// `cp == cp_len(s)` maps to `s.len()`.
pub fn byte_offset(s: &str, cp: usize) -> Option<usize> {
    if cp == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (b, _) in s.char_indices() {
        if count == cp {
            return Some(b);
        }
        count += 1;
    }
    (count == cp).then_some(s.len())
}

/// Slice `s` by code-point range `[start, end)`.
pub fn cp_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = byte_offset(s, start)?;
    let b1 = b0 + byte_offset(&s[b0..], end - start)?;
    Some(&s[b0..b1])
}

/// Precomputed code-point → byte table for repeated slicing of one string.
#[derive(Debug, Clone)]
pub struct CharIndex<'a> {
    text: &'a str,
    starts: Vec<usize>,
}

impl<'a> CharIndex<'a> {
    pub fn new(text: &'a str) -> Self {
        let mut starts: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        starts.push(text.len());
        Self { text, starts }
    }

    pub fn len(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte(&self, cp: usize) -> usize {
        self.starts[cp.min(self.len())]
    }

    pub fn slice(&self, start: usize, end: usize) -> &'a str {
        let (s, e) = (self.byte(start), self.byte(end.max(start)));
        &self.text[s..e]
    }

    /// The character at code point `cp`.
    pub fn char_at(&self, cp: usize) -> Option<char> {
        if cp >= self.len() {
            return None;
        }
        self.text[self.starts[cp]..].chars().next()
    }

    pub fn text(&self) -> &'a str {
        self.text
    }
}

/// Replace the code-point range `[start, end)` of `text` with `replacement`.
pub fn splice_cp(text: &str, start: usize, end: usize, replacement: &str) -> Option<String> {
    let b0 = byte_offset(text, start)?;
    let b1 = b0 + byte_offset(&text[b0..], end.checked_sub(start)?)?;
    let mut out = String::with_capacity(text.len() + replacement.len());
    out.push_str(&text[..b0]);
    out.push_str(replacement);
    out.push_str(&text[b1..]);
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_count_scalar_values() {
        let s = "Piątkiewicz [MASK]";
        assert_eq!(cp_len(s), 18);
        assert_eq!(cp_slice(s, 12, 18), Some("[MASK]"));
        assert_eq!(byte_offset(s, 18), Some(s.len()));
        assert_eq!(byte_offset(s, 19), None);
    }

    #[test]
    fn char_index_matches_free_functions() {
        let s = "żółć a [MASK] b";
        let idx = CharIndex::new(s);
        assert_eq!(idx.len(), cp_len(s));
        for a in 0..=idx.len() {
            for b in a..=idx.len() {
                assert_eq!(Some(idx.slice(a, b)), cp_slice(s, a, b));
            }
        }
    }

    #[test]
    fn splice_replaces_range() {
        assert_eq!(splice_cp("ą [MASK] z", 2, 8, "Łódź").unwrap(), "ą Łódź z");
        assert!(splice_cp("abc", 2, 5, "x").is_none());
    }
}
