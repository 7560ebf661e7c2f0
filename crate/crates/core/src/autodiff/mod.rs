//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] records operations on [`Var`] handles as they execute and is
//! differentiated once with [`Graph::backward`]. Persistent parameters live
//! in [`Tensor`]s outside the graph; each forward pass copies them in with
//! [`Graph::input`] and [`Graph::accumulate_into`] adds their gradients back,
//! so a tensor bound several times (a shared encoder) receives the sum of
//! every use.

mod adam;
pub mod gradcheck;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use graph::{BnStats, Graph, Mode, Var, BN_EPS, BN_MOMENTUM};
pub use tensor::Tensor;
