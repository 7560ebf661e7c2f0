use super::params::{Activation, Layer, NetworkParams, DESCRIPTOR_WIDTH};
use crate::autodiff::{BnStats, Graph, Mode, Var};
use crate::error::{Error, Result};
use crate::geometry::{PointSet, ShapePair};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Graph handles for one layer's parameters.
#[derive(Clone, Debug)]
pub struct BoundLayer {
    pub weight: Var,
    pub bias: Var,
    pub bn: Option<(Var, Var)>,
}

/// Graph handles for every parameter, bound once per graph so that both
/// encoder branches share them.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub encoder: Vec<BoundLayer>,
    pub morph: Vec<BoundLayer>,
}

/// Output of a stacked forward pass over several pairs.
pub struct BatchForward<T> {
    /// Stacked source points, `sum(n_i) x dim`.
    pub sources: Var,
    pub drifts: Var,
    /// `sources + drifts`.
    pub transformed: Var,
    /// Source descriptors for pairs `0..b`, then target descriptors.
    pub descriptors: Var,
    pub source_counts: Vec<usize>,
    /// Batch-norm statistics after this pass (updated only in train mode),
    /// encoder layers first.
    pub stats: Vec<BnStats<T>>,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        let bind_layer = |g: &mut Graph<T>, l: &Layer<T>| BoundLayer {
            weight: g.input(&l.weight),
            bias: g.input(&l.bias),
            bn: l.bn.as_ref().map(|b| (g.input(&b.gamma), g.input(&b.beta))),
        };
        BoundParams {
            encoder: self.encoder.iter().map(|l| bind_layer(g, l)).collect(),
            morph: self.morph.iter().map(|l| bind_layer(g, l)).collect(),
        }
    }

    /// Adds the gradients recorded on `g` into the parameter accumulators.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, bound: &BoundParams) {
        for (layer, b) in
            self.encoder.iter_mut().chain(self.morph.iter_mut()).zip(bound.encoder.iter().chain(&bound.morph))
        {
            g.accumulate_into(b.weight, &mut layer.weight);
            g.accumulate_into(b.bias, &mut layer.bias);
            if let (Some(bn), Some((gv, bv))) = (layer.bn.as_mut(), b.bn) {
                g.accumulate_into(gv, &mut bn.gamma);
                g.accumulate_into(bv, &mut bn.beta);
            }
        }
    }

    fn stats_snapshot(&self) -> Vec<BnStats<T>> {
        self.encoder.iter().chain(&self.morph).filter_map(|l| l.bn.as_ref().map(|b| b.stats.clone())).collect()
    }

    /// Writes statistics produced by a train-mode pass back into the layers.
    pub fn store_stats(&mut self, stats: Vec<BnStats<T>>) {
        let layers = self.encoder.iter_mut().chain(self.morph.iter_mut()).filter_map(|l| l.bn.as_mut());
        for (bn, s) in layers.zip(stats) {
            bn.stats = s;
        }
    }

    fn activate(&self, g: &mut Graph<T>, x: Var) -> Var {
        match self.activation {
            Activation::Relu => g.relu(x),
            Activation::Softplus => g.softplus(x),
        }
    }

    /// Batch norm (when present) then the activation.
    fn finish_hidden(
        &self,
        g: &mut Graph<T>,
        h: Var,
        b: &BoundLayer,
        stats: &mut BnStats<T>,
        mode: Mode,
    ) -> Result<Var> {
        let (gamma, beta) = b.bn.expect("hidden layers carry batch norm");
        let h = g.batchnorm(h, gamma, beta, stats, mode)?;
        Ok(self.activate(g, h))
    }

    fn stacked_input(&self, g: &mut Graph<T>, sets: &[&PointSet]) -> Result<(Var, Vec<usize>)> {
        let mut data = Vec::new();
        let mut counts = Vec::with_capacity(sets.len());
        for s in sets {
            if s.dim() != self.dim {
                return Err(Error::DimMismatch(s.dim(), self.dim));
            }
            data.extend(s.as_flat().iter().map(|&v| T::from_f64_lossy(v)));
            counts.push(s.len());
        }
        let rows = data.len() / self.dim;
        Ok((g.constant(Matrix::from_vec(rows, self.dim, data)?), counts))
    }

    /// Shared encoder over stacked point rows; one max-pooled descriptor per segment.
    fn encode_rows(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        x: Var,
        counts: &[usize],
        stats: &mut [BnStats<T>],
        mode: Mode,
    ) -> Result<Var> {
        let mut h = x;
        for (k, b) in bound.encoder.iter().enumerate() {
            h = g.affine(h, b.weight, Some(b.bias))?;
            h = self.finish_hidden(g, h, b, &mut stats[k], mode)?;
        }
        g.maxpool_segments(h, counts)
    }

    /// Displacement network over stacked source rows. `globals` holds one
    /// `[L_S, L_G]` row per pair.
    ///
    /// The first layer is evaluated as `x W_x + b + tile([L_S, L_G] W_g)`,
    /// which equals applying the full weight to the concatenated row
    /// `[x_i, L_S, L_G]` without materializing it.
    #[allow(clippy::too_many_arguments)]
    fn morph_rows(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        x: Var,
        globals: Var,
        counts: &[usize],
        stats: &mut [BnStats<T>],
        mode: Mode,
    ) -> Result<Var> {
        let first = &bound.morph[0];
        let w_x = g.slice_rows(first.weight, 0, self.dim)?;
        let w_g = g.slice_rows(first.weight, self.dim, 2 * DESCRIPTOR_WIDTH)?;
        let local = g.affine(x, w_x, Some(first.bias))?;
        let shared = g.affine(globals, w_g, None)?;
        let shared = g.tile_segments(shared, counts)?;
        let mut h = g.add(local, shared)?;
        let offset = self.encoder.len();
        let last = bound.morph.len() - 1;
        for (k, b) in bound.morph.iter().enumerate() {
            if k > 0 {
                h = g.affine(h, b.weight, Some(b.bias))?;
            }
            if k < last {
                h = self.finish_hidden(g, h, b, &mut stats[offset + k], mode)?;
            }
        }
        Ok(h)
    }

    /// Stacked forward pass over `sources[i] -> targets[i]` pairs.
    pub fn forward_batch(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        sources: &[&PointSet],
        targets: &[&PointSet],
        mode: Mode,
    ) -> Result<BatchForward<T>> {
        if sources.len() != targets.len() || sources.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "forward_batch",
                detail: format!("{} sources, {} targets", sources.len(), targets.len()),
            });
        }
        let b = sources.len();
        let mut stats = self.stats_snapshot();
        let all: Vec<&PointSet> = sources.iter().chain(targets).copied().collect();
        let (enc_in, enc_counts) = self.stacked_input(g, &all)?;
        let descriptors = self.encode_rows(g, bound, enc_in, &enc_counts, &mut stats, mode)?;
        let l_s = g.slice_rows(descriptors, 0, b)?;
        let l_g = g.slice_rows(descriptors, b, b)?;
        let globals = g.concat_cols(l_s, l_g)?;
        let (src_in, source_counts) = self.stacked_input(g, sources)?;
        let drifts = self.morph_rows(g, bound, src_in, globals, &source_counts, &mut stats, mode)?;
        let transformed = g.add(src_in, drifts)?;
        Ok(BatchForward { sources: src_in, drifts, transformed, descriptors, source_counts, stats })
    }

    /// Eval-mode, order-invariant descriptor of one set.
    pub fn encode(&self, ps: &PointSet) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let mut stats = self.stats_snapshot();
        let (x, counts) = self.stacked_input(&mut g, &[ps])?;
        let d = self.encode_rows(&mut g, &bound, x, &counts, &mut stats, Mode::Eval)?;
        Ok(g.value(d).as_slice().to_vec())
    }

    /// Eval-mode drifts for `source` given precomputed descriptors.
    pub fn morph(&self, source: &PointSet, l_s: &[T], l_g: &[T]) -> Result<DisplacementField> {
        if l_s.len() != DESCRIPTOR_WIDTH || l_g.len() != DESCRIPTOR_WIDTH {
            return Err(Error::ShapeMismatch {
                op: "morph",
                detail: format!("descriptors {} and {}", l_s.len(), l_g.len()),
            });
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let mut stats = self.stats_snapshot();
        let globals: Vec<T> = l_s.iter().chain(l_g).copied().collect();
        let globals = g.constant(Matrix::from_vec(1, 2 * DESCRIPTOR_WIDTH, globals)?);
        let (x, counts) = self.stacked_input(&mut g, &[source])?;
        let drifts = self.morph_rows(&mut g, &bound, x, globals, &counts, &mut stats, Mode::Eval)?;
        DisplacementField::new(source, g.value(drifts).cast())
    }

    /// Single forward pass: encode both sets, predict a drift for every source point.
    pub fn register_pair(&self, pair: &ShapePair) -> Result<DisplacementField> {
        self.register(&pair.source, &pair.target)
    }

    pub fn register(&self, source: &PointSet, target: &PointSet) -> Result<DisplacementField> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let fwd = self.forward_batch(&mut g, &bound, &[source], &[target], Mode::Eval)?;
        DisplacementField::new(source, g.value(fwd.drifts).cast())
    }
}

/// Per-point drifts and the moved source `S' = S + dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    pub drifts: Matrix<f64>,
    pub transformed: PointSet,
}

impl DisplacementField {
    pub fn new(source: &PointSet, drifts: Matrix<f64>) -> Result<Self> {
        if drifts.shape() != (source.len(), source.dim()) {
            return Err(Error::ShapeMismatch {
                op: "displacement",
                detail: format!("{:?} drifts for {} points", drifts.shape(), source.len()),
            });
        }
        let coords = source.as_flat().iter().zip(drifts.as_slice()).map(|(&x, &d)| x + d).collect();
        let transformed = PointSet::new(source.dim(), coords)
            .map_err(|_| Error::NonFinite("predicted drifts are not finite".into()))?;
        Ok(Self { drifts, transformed })
    }

    pub fn len(&self) -> usize {
        self.drifts.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.drifts.rows() == 0
    }
}
