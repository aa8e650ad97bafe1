//! Captioning metrics (BLEU-N, ROUGE-L, CIDEr) for side-by-side comparison
//! with MIRQI. All functions take pre-tokenized input; use
//! [`crate::reportnlp::tokenize_flat`] so the tokens match MIRQI's.

pub mod bleu;
pub mod cider;
pub mod ngram;
pub mod rouge;

use thiserror::Error;

pub use bleu::{bleu, bleu_stats, corpus_bleu, BleuStats, Smoothing};
pub use cider::{cider, CiderScores, CiderVariant, CorpusStats};
pub use ngram::NGramProfile;
pub use rouge::{lcs_len, rouge_l, ROUGE_BETA};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("candidate is empty")]
    EmptyCandidate,
    #[error("no references given")]
    NoReferences,
    #[error("candidate and reference must both be non-empty")]
    EmptyInput,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("n-gram order {0} outside 1..=4")]
    InvalidOrder(usize),
    #[error("{candidates} candidates but {references} reference sets")]
    LengthMismatch { candidates: usize, references: usize },
}
