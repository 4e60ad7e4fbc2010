//! Discrete-token emotion classification at desk scale.
//!
//! Per-layer k-means (or residual) tokenization of frozen feature streams, attention
//! fusion across layers, discretized paralinguistic augmentation and a pooled MLP
//! classifier trained with hand-written backpropagation. The numerical core is generic
//! over [`Scalar`] (`f32` or `f64`); feature files store `f32` and training runs in `f64`.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod matrix;
pub mod model;
pub mod quantize;
pub mod scalar;

pub use error::{Error, ErrorCategory, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Codebook32 = quantize::Codebook<f32>;
pub type Codebook64 = quantize::Codebook<f64>;
pub type FeatureSequence32 = dataio::FeatureSequence<f32>;
pub type Dataset32 = dataio::Dataset<f32>;
pub type Params64 = model::Params<f64>;
pub type Example64 = model::Example<f64>;
