//! The iterative fill-in loop and its pieces.

mod engine;
mod postprocess;
mod prompt;
mod schedule;
mod transcript;

pub use engine::{
    infill_document, Backends, DenseTrace, DocumentTrace, InfillConfig, InfillError, InfillOutcome, InfillPreset,
    InfillResult, ReidentifiedDocument, RetrievalStage, WorkingDocument, DEFAULT_CONTEXT_WINDOW, DEFAULT_MAX_TOKENS,
    MAX_PASSAGES,
};
pub use postprocess::{postprocess_hypothesis, UNANSWERED};
pub use prompt::{render_prompt, InfillMode, PromptError};
pub use schedule::{document_seed, schedule_spans};
pub use transcript::{read_transcript, request_key, TranscriptCache, TranscriptEntry};
