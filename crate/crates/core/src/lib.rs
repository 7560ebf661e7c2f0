//! Learned non-rigid point-set registration: synthetic data, a small
//! reverse-mode autodiff engine, the registration network, its losses, a
//! classical coherent-point-drift baseline, and the training loop.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the common choices.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cpd;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod train;
pub mod util;

pub use error::{Error, Result};
pub use geometry::{PointSet, ShapePair};
pub use matrix::Matrix;
pub use scalar::Scalar;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Params32 = model::NetworkParams<f32>;
pub type Params64 = model::NetworkParams<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
