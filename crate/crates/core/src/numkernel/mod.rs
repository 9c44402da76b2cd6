//! Tensor arithmetic, the differentiation tape, and the finite-difference
//! gradient oracle used to verify it.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, rel_error, GradCheck, GradCheckReport, LeafReport};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;


/// Stabilizer added to the variance in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss is not on this tape")]
    NotOnTape,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

#[cfg(test)]
mod fd_tests;
