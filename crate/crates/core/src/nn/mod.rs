//! Reverse-mode automatic differentiation over dense tensors, and the layer
//! set used by the classifier and the translator.

mod graph;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod optim;
mod params;
mod real;
mod tensor;

use alloc::string::String;
use alloc::vec::Vec;

pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data of length {len} does not fit shape {shape:?}")]
    BadLength { len: usize, shape: Vec<usize> },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("index {index} out of range for a table of {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("{0}")]
    Invalid(&'static str),
}
