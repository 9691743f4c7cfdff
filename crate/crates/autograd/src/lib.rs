//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Only the operations needed by the volumetric encoder/decoder models are
//! provided: 3D convolution, trilinear upsampling, channel concatenation,
//! quarter-turn rotations, pooling, small matrix products and the usual
//! pointwise and normalising functions.

pub mod check;
mod graph;
pub mod kernels;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutogradError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got {got}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rotation needs square trailing planes, got shape {0:?}")]
    NonSquarePlane(Vec<usize>),
    #[error("cannot normalise a zero-norm vector")]
    DegenerateNorm,
    #[error("index {index} out of bounds for length {len}")]
    Index { index: usize, len: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
}

impl AutogradError {
    pub(crate) fn shape(op: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Self::Shape {
            op,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, AutogradError>;
