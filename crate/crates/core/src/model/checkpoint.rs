//! Binary checkpoint format (little-endian).
//!
//! ```text
//! "CPDN" | version u32 = 1 | dim u8 | activation u8 | encoder layers u8 | morph layers u8
//! per layer: rows u32 | cols u32 | weight f32[rows*cols] | bias f32[cols]
//!            [gamma | beta | running_mean | running_var  f32[cols] each, batch-norm layers only]
//! crc32 u32 over every preceding byte
//! ```
//! Every encoder layer and every morph layer except the last carries batch norm.

use std::path::Path;

use super::params::{Activation, BatchNormParams, Layer, NetworkParams};
use crate::autodiff::{BnStats, Tensor};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::util::write_atomic;

pub const MAGIC: &[u8; 4] = b"CPDN";
pub const VERSION: u32 = 1;

fn put_f32s<T: Scalar>(out: &mut Vec<u8>, vals: &[T]) {
    for v in vals {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

pub fn encode<T: Scalar>(params: &NetworkParams<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(params.dim as u8);
    out.push(params.activation.code());
    out.push(params.encoder.len() as u8);
    out.push(params.morph.len() as u8);
    for l in params.encoder.iter().chain(&params.morph) {
        out.extend_from_slice(&(l.fan_in() as u32).to_le_bytes());
        out.extend_from_slice(&(l.fan_out() as u32).to_le_bytes());
        put_f32s(&mut out, l.weight.value.as_slice());
        put_f32s(&mut out, l.bias.value.as_slice());
        if let Some(bn) = &l.bn {
            put_f32s(&mut out, bn.gamma.value.as_slice());
            put_f32s(&mut out, bn.beta.value.as_slice());
            put_f32s(&mut out, &bn.stats.running_mean);
            put_f32s(&mut out, &bn.stats.running_var);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("layer too large".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect())
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<NetworkParams<T>> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a CPDN checkpoint".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("checkpoint CRC mismatch".into()));
    }
    let dim = r.u8()? as usize;
    let activation = Activation::from_code(r.u8()?)?;
    let n_enc = r.u8()? as usize;
    let n_morph = r.u8()? as usize;
    let mut read_layer = |with_bn: bool| -> Result<Layer<T>> {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let weight = Matrix::from_vec(rows, cols, r.f32s(rows * cols)?)?;
        let bias = Matrix::from_vec(1, cols, r.f32s(cols)?)?;
        let bn = if with_bn {
            let gamma = Matrix::from_vec(1, cols, r.f32s(cols)?)?;
            let beta = Matrix::from_vec(1, cols, r.f32s(cols)?)?;
            let running_mean = r.f32s(cols)?;
            let running_var = r.f32s(cols)?;
            Some(BatchNormParams {
                gamma: Tensor::param(gamma),
                beta: Tensor::param(beta),
                stats: BnStats { running_mean, running_var },
            })
        } else {
            None
        };
        Ok(Layer { weight: Tensor::param(weight), bias: Tensor::param(bias), bn })
    };
    let encoder = (0..n_enc).map(|_| read_layer(true)).collect::<Result<Vec<_>>>()?;
    let morph = (0..n_morph).map(|k| read_layer(k + 1 < n_morph)).collect::<Result<Vec<_>>>()?;
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", body.len() - r.pos)));
    }
    let params = NetworkParams { dim, activation, encoder, morph };
    params.validate()?;
    Ok(params)
}

pub fn save<T: Scalar>(params: &NetworkParams<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(params))
}

pub fn load<T: Scalar>(path: &Path) -> Result<NetworkParams<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
