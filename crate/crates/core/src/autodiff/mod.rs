//! Dense `f64` tensors with tape-based reverse-mode differentiation and Adam.
//!
//! A [`Tape`] is built fresh for every forward pass. Parameters live in a
//! [`ParamStore`] and are copied onto the tape as leaves; after
//! [`Tape::backward`] their gradients are folded back with
//! [`Tape::accumulate_param_grads`] and consumed by [`Adam::step`].

mod adam;
mod gemm;
mod params;
mod tape;
mod tensor;

pub mod gradcheck;

use alloc::string::String;
use alloc::vec::Vec;

pub use adam::{Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Tape, Var, BCE_LOG_FLOOR};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("shape {shape:?} holds {len} elements")]
    ElementCount { shape: Vec<usize>, len: usize },
    #[error("shape {shape:?} has a zero extent")]
    EmptyExtent { shape: Vec<usize> },
    #[error("expected rank {expected}, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("expected a square matrix, got {shape:?}")]
    NotSquare { shape: Vec<usize> },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: index out of range")]
    OutOfRange { op: &'static str },
    #[error("{op}: non-positive output extent")]
    NonPositiveExtent { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f64),
    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },
}
