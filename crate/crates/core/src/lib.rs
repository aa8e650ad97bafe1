//! Radiology report evaluation on a chest abnormality knowledge graph.
//!
//! - [`chestkg`]: the prior-knowledge graph of finding categories and its
//!   propagation matrix.
//! - [`reportnlp`]: report text → per-report entity sub-graph (mentions,
//!   negation/uncertainty, attributes; CoNLL-U parses optional).
//! - [`mirqi`]: node-by-node graph matching and the MIRQI recall, precision
//!   and F1.
//! - [`captionmetrics`]: BLEU, ROUGE-L and CIDEr on the same tokens.

pub mod captionmetrics;
pub mod chestkg;
pub mod mirqi;
pub mod reportnlp;

pub use chestkg::{ChestGraph, PropagationKind, PropagationMatrix};
pub use mirqi::{MirqiConfig, MirqiScore, MirqiWeights};
pub use reportnlp::{Entity, EntityGraph, Lexicon, Polarity, ReportParser};
