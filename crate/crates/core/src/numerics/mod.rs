//! Dense 64-bit tensor math with hand-written backward passes.
//!
//! This is the minimal substrate the classifier needs: matrix products,
//! softmax, layer normalization, GELU, cross-entropy, a seedable RNG, and a
//! finite-difference gradient checker. Every operation is a sequential loop
//! over row-major data, so identical inputs produce bit-identical outputs.

pub(crate) mod kernels;

mod gradcheck;
mod ops;
mod rng;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use ops::{
    cross_entropy, cross_entropy_backward, gelu, gelu_backward, layer_norm, layer_norm_backward,
    matmul, matmul_backward, softmax, softmax_backward,
};
pub use rng::Rng;
pub use tensor::Tensor;

/// Errors from tensor construction and the numeric operations.
#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("axis {axis} out of range for shape {shape:?}")]
    BadAxis { axis: usize, shape: Vec<usize> },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}
