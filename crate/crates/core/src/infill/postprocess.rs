use crate::analyzer::{MASK_TOKEN, UNK_TOKEN};

/// Stand-in for an empty answer; scored as wrong, never substituted empty.
pub const UNANSWERED: &str = "[UNANSWERED]";

const QUOTE_PAIRS: &[(char, char)] = &[('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’'), ('«', '»'), ('`', '`')];

/// Cleans a raw backend answer into a hypothesis.
///
/// Rules, in order: trim; cut at the first newline; drop echoed
/// placeholder tokens (`[MASK]`, `[UNK]`, and `extra`); trim; strip one pair
/// of quotes when they enclose the whole string and nothing inside uses the
/// same quote; trim. Empty → [`UNANSWERED`].
pub fn postprocess_hypothesis(raw: &str, extra_placeholders: &[&str]) -> String {
    let mut s = raw.trim();
    if let Some(i) = s.find(['\n', '\r']) {
        s = &s[..i];
    }
    let mut owned = s.to_string();
    // repeat: removing one echo can splice together another
    loop {
        let before = owned.len();
        for p in [MASK_TOKEN, UNK_TOKEN].iter().chain(extra_placeholders) {
            if !p.is_empty() {
                owned = owned.replace(p, "");
            }
        }
        if owned.len() == before {
            break;
        }
    }
    let mut s = owned.trim();
    for &(open, close) in QUOTE_PAIRS {
        if let Some(inner) = s.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            if !inner.contains(open) && !inner.contains(close) {
                s = inner.trim();
            }
            break;
        }
    }
    if s.is_empty() {
        UNANSWERED.to_string()
    } else {
        s.to_string()
    }
}
