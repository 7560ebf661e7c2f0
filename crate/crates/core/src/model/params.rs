use serde::{Deserialize, Serialize};

use crate::autodiff::{BnStats, Tensor};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Stream;
use crate::scalar::Scalar;

/// Output widths of the per-point encoder layers; the last is the descriptor size.
pub const ENCODER_WIDTHS: [usize; 5] = [16, 64, 128, 256, 512];
/// Hidden widths of the displacement network; its output width is the point dimension.
pub const MORPH_HIDDEN: [usize; 2] = [256, 128];
pub const DESCRIPTOR_WIDTH: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softplus,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Softplus => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Softplus),
            c => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "softplus" => Ok(Activation::Softplus),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: BnStats<T>,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::param(Matrix::filled(1, channels, T::one())),
            beta: Tensor::param(Matrix::zeros(1, channels)),
            stats: BnStats::new(channels),
        }
    }
}

/// Fully connected layer `x W + b`, optionally followed by batch norm.
/// `weight` is `fan_in x fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub bn: Option<BatchNormParams<T>>,
}

impl<T: Scalar> Layer<T> {
    fn glorot(fan_in: usize, fan_out: usize, with_bn: bool, rng: &mut Stream) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Matrix::from_fn(fan_in, fan_out, |_, _| T::from_f64_lossy(rng.uniform_in(-limit, limit)));
        Self {
            weight: Tensor::param(w),
            bias: Tensor::param(Matrix::zeros(1, fan_out)),
            bn: with_bn.then(|| BatchNormParams::new(fan_out)),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.cols()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.weight, &mut self.bias];
        if let Some(bn) = self.bn.as_mut() {
            v.push(&mut bn.gamma);
            v.push(&mut bn.beta);
        }
        v
    }
}

/// All weights of the shared point encoder and the displacement network.
///
/// The same encoder describes both the source and the target set. The first
/// displacement layer reads `[x_i, L_S, L_G]`, so its fan-in is `dim + 1024`;
/// rows `0..dim` of its weight act on the point coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub dim: usize,
    pub activation: Activation,
    pub encoder: Vec<Layer<T>>,
    pub morph: Vec<Layer<T>>,
}

impl<T: Scalar> NetworkParams<T> {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale; deterministic in `seed`.
    pub fn init(dim: usize, activation: Activation, seed: u64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::UnsupportedDim(dim));
        }
        let mut rng = Stream::new(seed);
        let mut encoder = Vec::new();
        let mut fan_in = dim;
        for &w in &ENCODER_WIDTHS {
            encoder.push(Layer::glorot(fan_in, w, true, &mut rng));
            fan_in = w;
        }
        let mut morph = Vec::new();
        let mut fan_in = dim + 2 * DESCRIPTOR_WIDTH;
        for &w in &MORPH_HIDDEN {
            morph.push(Layer::glorot(fan_in, w, true, &mut rng));
            fan_in = w;
        }
        morph.push(Layer::glorot(fan_in, dim, false, &mut rng));
        Ok(Self { dim, activation, encoder, morph })
    }

    /// Checks widths and batch-norm placement.
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Format(detail));
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::UnsupportedDim(self.dim));
        }
        let mut fan_in = self.dim;
        for (k, l) in self.encoder.iter().enumerate() {
            if l.fan_in() != fan_in || l.bias.shape() != (1, l.fan_out()) || l.bn.is_none() {
                return bad(format!("encoder layer {k} malformed"));
            }
            fan_in = l.fan_out();
        }
        if fan_in != DESCRIPTOR_WIDTH {
            return bad(format!("descriptor width {fan_in}, expected {DESCRIPTOR_WIDTH}"));
        }
        let mut fan_in = self.dim + 2 * DESCRIPTOR_WIDTH;
        let last = self.morph.len().saturating_sub(1);
        for (k, l) in self.morph.iter().enumerate() {
            if l.fan_in() != fan_in || l.bias.shape() != (1, l.fan_out()) || l.bn.is_some() == (k == last) {
                return bad(format!("morph layer {k} malformed"));
            }
            fan_in = l.fan_out();
        }
        if self.morph.is_empty() || fan_in != self.dim {
            return bad("morph output width must equal the point dimension".into());
        }
        Ok(())
    }

    /// Every trainable tensor in a fixed order (encoder then morph, layer by layer).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.encoder.iter_mut().chain(self.morph.iter_mut()).flat_map(Layer::tensors_mut).collect()
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().into_iter().for_each(Tensor::zero_grad);
    }

    pub fn num_parameters(&self) -> usize {
        self.encoder
            .iter()
            .chain(&self.morph)
            .map(|l| {
                let bn = l.bn.as_ref().map_or(0, |b| 2 * b.stats.channels());
                l.weight.value.as_slice().len() + l.fan_out() + bn
            })
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.encoder.iter().chain(&self.morph).all(|l| {
            l.weight.value.all_finite()
                && l.bias.value.all_finite()
                && l.bn.as_ref().is_none_or(|b| b.gamma.value.all_finite() && b.beta.value.all_finite())
        })
    }

    /// Converts every weight and statistic to another scalar type.
    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        let cast_t = |t: &Tensor<T>| Tensor::new(t.value.cast(), t.requires_grad());
        let cast_v = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect();
        let layer = |l: &Layer<T>| Layer {
            weight: cast_t(&l.weight),
            bias: cast_t(&l.bias),
            bn: l.bn.as_ref().map(|b| BatchNormParams {
                gamma: cast_t(&b.gamma),
                beta: cast_t(&b.beta),
                stats: BnStats {
                    running_mean: cast_v(&b.stats.running_mean),
                    running_var: cast_v(&b.stats.running_var),
                },
            }),
        };
        NetworkParams {
            dim: self.dim,
            activation: self.activation,
            encoder: self.encoder.iter().map(layer).collect(),
            morph: self.morph.iter().map(layer).collect(),
        }
    }
}

/// Same as [`NetworkParams::init`].
pub fn init_params<T: Scalar>(dim: usize, activation: Activation, seed: u64) -> Result<NetworkParams<T>> {
    NetworkParams::init(dim, activation, seed)
}
