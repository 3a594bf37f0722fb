//! Zero-shot infilling prompts.

use serde::{Deserialize, Serialize};

use crate::analyzer::MASK_TOKEN;
use crate::chunk_query::Chunk;

const INSTRUCTION: &str = "Re-identify the fill in the blank (marked with [MASK]) in the text below, only give the value of the [MASK], do not add extra text, give explanations, or output the blank token [MASK]:";
const PASSAGES_HEADER: &str = "Given the following passages:";
const ANSWER: &str = "Answer:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfillMode {
    NoRetrieval,
    Retrieval,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("context must contain exactly one {MASK_TOKEN}, found {0}")]
    Placeholder(usize),
    #[error("retrieval prompt needs at least one passage")]
    NoPassages,
}

/// Instantiates the prompt template for `mode`.
///
/// Passages are joined by a blank line in retrieval order.
pub fn render_prompt(context: &str, passages: &[Chunk], mode: InfillMode) -> Result<String, PromptError> {
    let masks = context.matches(MASK_TOKEN).count();
    if masks != 1 {
        return Err(PromptError::Placeholder(masks));
    }
    let body = format!("{INSTRUCTION}\n\n{context}\n\n{ANSWER}");
    match mode {
        InfillMode::NoRetrieval => Ok(body),
        InfillMode::Retrieval => {
            if passages.is_empty() {
                return Err(PromptError::NoPassages);
            }
            let retrieved = passages.iter().map(|p| p.text.as_str()).collect::<Vec<_>>().join("\n\n");
            Ok(format!("{PASSAGES_HEADER}\n\n{retrieved}\n\n{body}"))
        }
    }
}
