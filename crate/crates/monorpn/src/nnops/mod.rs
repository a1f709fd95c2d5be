//! Minimal dense tensor operations for the detector heads.
//!
//! Covers exactly what the inference path needs: direct 2D convolution,
//! depth-aware (row-binned) convolution with a reference and an optimized
//! execution strategy that agree bit-for-bit, elementwise activations,
//! output fusion, multiply-add accounting, and a finite-difference gradient
//! checker used to validate the loss gradients.

mod container;
mod conv;
mod ops;
mod tensor;

pub use container::{load_tensor, read_tensor, save_tensor, write_tensor};
pub use conv::{
    bin_index, bin_row_ranges, conv2d, depth_aware_conv, depth_aware_conv_reference,
    flop_count, ConvOp, DepthAwareKernelSet,
};
pub use ops::{
    finite_diff_check, fuse_outputs, relu, sigmoid, sigmoid_scalar, softmax, softmax_slice,
    FusionWeights,
};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OpError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("bin count {bins} exceeds output rows {rows}")]
    BinCountExceedsRows { bins: usize, rows: usize },
    #[error("tensor contains non-finite values")]
    NonFinite,
    #[error("tensor container: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
