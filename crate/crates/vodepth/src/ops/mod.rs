//! Tape-recorded tensor operations.
//!
//! Each file adds an `impl` block on [`crate::tape::Tape`]: elementwise and
//! reduction ops, convolution, pooling/resampling, horizontal warping, and
//! the normalized masked convolution. Forward kernels that backward passes
//! reuse live beside their op.

mod conv;
mod elementwise;
mod pool;
mod sparse;
mod warp;

pub use conv::{conv2d_bias_grad, conv2d_forward, conv2d_input_grad, conv2d_weight_grad};
pub use pool::max_pool2d_forward;
pub use warp::WarpDirection;
