//! The registration network: a shared point encoder producing global shape
//! descriptors and a per-point displacement network conditioned on both.

pub mod checkpoint;
mod forward;
mod lipschitz;
mod params;

pub use forward::{BatchForward, BoundLayer, BoundParams, DisplacementField};
pub use lipschitz::{batchnorm_gain, chain_bound, lipschitz_bound, spectral_norm, POWER_ITERATIONS, POWER_TOL};
pub use params::{
    init_params, Activation, BatchNormParams, Layer, NetworkParams, DESCRIPTOR_WIDTH, ENCODER_WIDTHS, MORPH_HIDDEN,
};
