//! Dense `f64` tensors, reverse-mode differentiation, gradient verification,
//! AdamW, and the checkpoint container.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointError, CHECKPOINT_MAGIC,
};
pub use gradcheck::{check_gradient, check_gradients, check_param_gradients, relative_error, GRAD_FLOOR};
pub use graph::{softmax_slice, Graph, Var, Workspace};
pub use optim::{AdamW, AdamWConfig, DecayMode};
pub use params::{ParamId, Parameters};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("slice [{start}, {end}) out of range on axis {axis} of {shape:?}")]
    SliceRange {
        shape: Vec<usize>,
        axis: usize,
        start: usize,
        end: usize,
    },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("label {label} is not a valid class for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
}
