//! Self-supervised stereo disparity estimation guided by sparse
//! visual-odometry priors.
//!
//! The crate is built in layers:
//!
//! * [`tensor`] and [`tape`] provide dense float tensors and a flat-tape
//!   reverse-mode differentiation engine, generic over [`f32`]/[`f64`]
//!   through the [`Scalar`] trait.
//! * [`ops`] holds the differentiable operations recorded on the tape:
//!   convolutions, pooling, resampling, bilinear disparity warping and the
//!   sparsity-invariant convolution used for irregular inputs.
//! * [`geometry`], [`autoencoder`], [`skip`], [`estimator`] and [`losses`]
//!   implement the pipeline itself: a pinhole stereo rig, densification of
//!   sparse disparities, residual fusion into a pyramid disparity estimator,
//!   and the photometric/consistency/prior objective.
//! * [`synth`] and [`dataset`] generate and persist synthetic stereo scenes
//!   with exact ground truth and simulated odometry measurements.
//! * [`harness`] binds everything into training, evaluation and inference,
//!   with deterministic seeding, checkpointing and Eigen-style metrics.
//! * [`reference`] and [`gradcheck`] exist for verification: straight-loop
//!   reimplementations of the numeric kernels and finite-difference
//!   gradient checking.

pub mod autoencoder;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod ops;
pub mod reference;
pub mod scalar;
pub mod skip;
pub mod synth;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{GradBuffer, NodeId, ParamId, ParamStore, Parameter, Tape};
pub use tensor::Tensor;

/// Training-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Verification-precision tensor.
pub type Tensor64 = Tensor<f64>;
