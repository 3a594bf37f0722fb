use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::MaskedDocument;

/// Seeded uniform permutation of the document's span ids.
pub fn schedule_spans(md: &MaskedDocument, seed: u64) -> Vec<String> {
    let mut ids: Vec<String> = md.spans.iter().map(|s| s.span_id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids
}

/// Per-document schedule seed derived from the run's order seed.
pub fn document_seed(order_seed: u64, doc_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(order_seed.to_le_bytes());
    h.update(doc_id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}
