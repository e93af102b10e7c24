//! Dense numeric kernel: matrices, softmax, reverse-mode tape, seeded
//! initialization and the central-difference gradient oracle.

mod finite_diff;
mod init;
mod matrix;
mod scalar;
mod tape;

pub use finite_diff::{finite_diff_grad, max_relative_error, relative_error, GRAD_FLOOR};
pub use init::{derive_seed, seeded_init, seeded_rng, InitScheme};
pub use matrix::{softmax_scaled, Matrix};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub(crate) use matrix::log_softmax_row;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("function returned a non-finite value while perturbing coordinate {index}")]
    NonFiniteEvaluation { index: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("expected {expected} targets, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("every target position is padding")]
    AllPadded,
}
