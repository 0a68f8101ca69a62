//! Reverse-mode differentiation, parameter storage, optimizer and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{DiffArray, Tape, Unary, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("index {index} out of vocabulary of size {vocab}")]
    IndexOutOfVocab { index: usize, vocab: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape; reset gradients first")]
    BackwardTwice,
    #[error("trainable parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Invalid(String),
}
