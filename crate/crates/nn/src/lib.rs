//! Graph embedding and report decoder on a small reverse-mode tape.
//!
//! - [`tensor`] and [`tape`]: dense `f64` tensors and automatic
//!   differentiation.
//! - [`params`]: named parameter trees, gradient descent, checkpoints by
//!   name.
//! - [`graphnn`]: per-category node attention over a CNN feature map,
//!   graph convolutions over the chest graph and a multi-label classifier.
//! - [`decoder`]: vocabulary, graph attention and the two-level LSTM that
//!   writes a report sentence by sentence.
//! - [`gradcheck`]: finite-difference checks of every gradient.
//! - [`io`]: the binary tensor container.

#[macro_use]
pub mod params;

pub mod decoder;
pub mod gradcheck;
pub mod graphnn;
pub mod io;
pub mod model;
pub mod synth;
pub mod tape;
pub mod tensor;

use thiserror::Error;

pub use params::{Linear, Module, Norm, Sgd};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("{what}: expected shape {expected:?}, found {found:?}")]
    Shape {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("malformed tensor data: {0}")]
    Format(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint has no tensor named {0:?}")]
    MissingTensor(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },
    #[error("topic state used before initialization")]
    UninitializedState,
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
