//! The recording tape and every differentiable operation.

use super::Tensor;
use crate::error::{Error, Result};
use crate::losses::{self, LossKind};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running per-channel statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BnStats<T> {
    pub fn new(channels: usize) -> Self {
        Self { running_mean: vec![T::zero(); channels], running_var: vec![T::one(); channels] }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

enum Op<T> {
    Leaf,
    Affine { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    Softplus(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix<T>, inv_std: Vec<T>, train: bool },
    MaxPool { x: Var, argmax: Vec<usize> },
    ConcatCols(Var, Var),
    TileSegments { v: Var, counts: Vec<usize> },
    SliceRows { x: Var, start: usize },
    Chamfer { a: Var, b: Var, grad_a: Matrix<T>, grad_b: Matrix<T>, pattern: u64 },
}

struct Node<T> {
    op: Op<T>,
    value: Matrix<T>,
    needs_grad: bool,
}

/// A single-use record of operations for one reverse pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Matrix<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// FNV-1a over 64-bit words.
struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn word(&mut self, w: u64) {
        for b in w.to_le_bytes() {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
    }
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Records a leaf holding a copy of the tensor's value.
    pub fn input(&mut self, t: &Tensor<T>) -> Var {
        self.leaf(t.value.clone(), t.requires_grad())
    }

    pub fn leaf(&mut self, value: Matrix<T>, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.leaf(value, false)
    }

    /// Row-wise `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, p) = self.shape(x);
        let (wp, q) = self.shape(w);
        if p != wp {
            return Err(mismatch("affine", format!("x is {n}x{p}, W is {wp}x{q}")));
        }
        let mut out = match b {
            Some(b) => {
                if self.shape(b) != (1, q) {
                    return Err(mismatch("affine", format!("bias is {:?}, expected 1x{q}", self.shape(b))));
                }
                let bias = self.value(b).as_slice();
                let mut m = Matrix::zeros(n, q);
                for i in 0..n {
                    m.row_mut(i).copy_from_slice(bias);
                }
                m
            }
            None => Matrix::zeros(n, q),
        };
        T::gemm(
            n,
            p,
            q,
            T::one(),
            self.value(x).as_slice(),
            false,
            self.value(w).as_slice(),
            false,
            T::one(),
            out.as_mut_slice(),
        );
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Op::Affine { x, w, b }, out, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), out, needs))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        let needs = self.needs(a);
        self.push(Op::Scale(a, s), out, needs)
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).as_slice().iter().map(|v| v.as_f64()).sum::<f64>();
        let needs = self.needs(a);
        self.push(Op::Sum(a), Matrix::filled(1, 1, T::from_f64_lossy(total)), needs)
    }

    /// `max(x, 0)`; the subgradient at zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let needs = self.needs(x);
        self.push(Op::Relu(x), out, needs)
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        let needs = self.needs(x);
        self.push(Op::Softplus(x), out, needs)
    }

    /// Per-column batch normalization.
    ///
    /// Train mode normalizes with the batch mean and biased variance and folds
    /// them into `stats` (unbiased variance, momentum [`BN_MOMENTUM`]). Eval
    /// mode uses the running statistics.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, stats: &mut BnStats<T>, mode: Mode) -> Result<Var> {
        let (n, q) = self.shape(x);
        if self.shape(gamma) != (1, q) || self.shape(beta) != (1, q) || stats.channels() != q {
            return Err(mismatch("batchnorm", format!("{q} channels vs gamma {:?}", self.shape(gamma))));
        }
        let eps = T::from_f64_lossy(BN_EPS);
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::BatchTooSmall(n));
                }
                let xv = self.value(x);
                let mut mean = vec![0.0f64; q];
                for i in 0..n {
                    for (m, v) in mean.iter_mut().zip(xv.row(i)) {
                        *m += v.as_f64();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0f64; q];
                for i in 0..n {
                    for ((s, v), m) in var.iter_mut().zip(xv.row(i)).zip(&mean) {
                        let d = v.as_f64() - m;
                        *s += d * d;
                    }
                }
                let mom = BN_MOMENTUM;
                for j in 0..q {
                    let unbiased = var[j] / (n - 1) as f64;
                    var[j] /= n as f64;
                    let rm = stats.running_mean[j].as_f64();
                    let rv = stats.running_var[j].as_f64();
                    stats.running_mean[j] = T::from_f64_lossy((1.0 - mom) * rm + mom * mean[j]);
                    stats.running_var[j] = T::from_f64_lossy((1.0 - mom) * rv + mom * unbiased);
                }
                (
                    mean.into_iter().map(T::from_f64_lossy).collect::<Vec<T>>(),
                    var.into_iter().map(T::from_f64_lossy).collect::<Vec<T>>(),
                )
            }
            Mode::Eval => (stats.running_mean.clone(), stats.running_var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xv = self.value(x);
        let g = self.value(gamma).as_slice();
        let b = self.value(beta).as_slice();
        let mut xhat = Matrix::zeros(n, q);
        let mut out = Matrix::zeros(n, q);
        for i in 0..n {
            let (src, hat_row) = (xv.row(i), xhat.row_mut(i));
            for j in 0..q {
                hat_row[j] = (src[j] - mean[j]) * inv_std[j];
            }
            let o = out.row_mut(i);
            for j in 0..q {
                o[j] = g[j] * xhat[(i, j)] + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(Op::BatchNorm { x, gamma, beta, xhat, inv_std, train: mode == Mode::Train }, out, needs))
    }

    /// Column-wise maximum over all rows.
    pub fn maxpool_rows(&mut self, x: Var) -> Result<Var> {
        let n = self.shape(x).0;
        self.maxpool_segments(x, &[n])
    }

    /// Column-wise maximum over consecutive row segments of the given sizes;
    /// one output row per segment. Ties go to the lowest row.
    pub fn maxpool_segments(&mut self, x: Var, counts: &[usize]) -> Result<Var> {
        let (n, q) = self.shape(x);
        if counts.iter().sum::<usize>() != n || counts.contains(&0) {
            return Err(mismatch("maxpool", format!("segments {counts:?} do not tile {n} rows")));
        }
        let xv = self.value(x);
        let mut out = Matrix::zeros(counts.len(), q);
        let mut argmax = vec![0usize; counts.len() * q];
        let mut start = 0;
        for (s, &c) in counts.iter().enumerate() {
            let o = out.row_mut(s);
            o.copy_from_slice(xv.row(start));
            let am = &mut argmax[s * q..(s + 1) * q];
            am.iter_mut().for_each(|a| *a = start);
            for i in start + 1..start + c {
                for (j, &v) in xv.row(i).iter().enumerate() {
                    if v > o[j] {
                        o[j] = v;
                        am[j] = i;
                    }
                }
            }
            start += c;
        }
        let needs = self.needs(x);
        Ok(self.push(Op::MaxPool { x, argmax }, out, needs))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, p) = self.shape(a);
        let (nb, q) = self.shape(b);
        if n != nb {
            return Err(mismatch("concat_cols", format!("{n} rows vs {nb} rows")));
        }
        let mut out = Matrix::zeros(n, p + q);
        for i in 0..n {
            let row = out.row_mut(i);
            row[..p].copy_from_slice(self.nodes[a.0].value.row(i));
            row[p..].copy_from_slice(self.nodes[b.0].value.row(i));
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ConcatCols(a, b), out, needs))
    }

    /// Repeats a `1 x q` row `n` times.
    pub fn tile_row(&mut self, v: Var, n: usize) -> Result<Var> {
        if self.shape(v).0 != 1 {
            return Err(mismatch("tile_row", format!("expected one row, got {:?}", self.shape(v))));
        }
        self.tile_segments(v, &[n])
    }

    /// Repeats row `s` of `v` `counts[s]` times, stacking the results.
    pub fn tile_segments(&mut self, v: Var, counts: &[usize]) -> Result<Var> {
        let (s, q) = self.shape(v);
        if counts.len() != s {
            return Err(mismatch("tile_segments", format!("{} counts for {s} rows", counts.len())));
        }
        let total = counts.iter().sum();
        let mut out = Matrix::zeros(total, q);
        let mut r = 0;
        for (k, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                out.row_mut(r).copy_from_slice(self.nodes[v.0].value.row(k));
                r += 1;
            }
        }
        let needs = self.needs(v);
        Ok(self.push(Op::TileSegments { v, counts: counts.to_vec() }, out, needs))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, q) = self.shape(x);
        if start + len > n {
            return Err(mismatch("slice_rows", format!("rows {start}..{} of {n}", start + len)));
        }
        let data = self.value(x).as_slice()[start * q..(start + len) * q].to_vec();
        let out = Matrix::from_vec(len, q, data)?;
        let needs = self.needs(x);
        Ok(self.push(Op::SliceRows { x, start }, out, needs))
    }

    /// Chamfer-family loss between the point rows of `a` and `b`, as a 1x1 tensor.
    ///
    /// Distances and sums are evaluated in 64-bit; gradients flow only along
    /// the nearest-neighbour pairs whose terms are not clipped.
    pub fn chamfer(&mut self, a: Var, b: Var, kind: LossKind) -> Result<Var> {
        let (na, d) = self.shape(a);
        let (nb, db) = self.shape(b);
        if d != db {
            return Err(Error::DimMismatch(d, db));
        }
        if na == 0 || nb == 0 {
            return Err(Error::EmptySet);
        }
        let av = self.value(a);
        let bv = self.value(b);
        let eval = losses::evaluate_flat(av.as_slice(), bv.as_slice(), d, kind)?;
        let mut grad_a = Matrix::zeros(na, d);
        let mut grad_b = Matrix::zeros(nb, d);
        let two = T::from_f64_lossy(2.0);
        for (i, (&j, &on)) in eval.forward.indices.iter().zip(&eval.forward_active).enumerate() {
            if on {
                for k in 0..d {
                    let diff = two * (av[(i, k)] - bv[(j, k)]);
                    grad_a[(i, k)] += diff;
                    grad_b[(j, k)] -= diff;
                }
            }
        }
        for (j, (&i, &on)) in eval.backward.indices.iter().zip(&eval.backward_active).enumerate() {
            if on {
                for k in 0..d {
                    let diff = two * (bv[(j, k)] - av[(i, k)]);
                    grad_b[(j, k)] += diff;
                    grad_a[(i, k)] -= diff;
                }
            }
        }
        let mut pattern = Fnv::default();
        eval.forward.indices.iter().chain(&eval.backward.indices).for_each(|&i| pattern.word(i as u64));
        eval.forward_active.iter().chain(&eval.backward_active).for_each(|&on| pattern.word(on as u64));
        let out = Matrix::filled(1, 1, T::from_f64_lossy(eval.value.total));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Chamfer { a, b, grad_a, grad_b, pattern: pattern.0 }, out, needs))
    }

    /// Runs the reverse pass from a 1x1 `loss`. The tape can only be
    /// differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss(r, c));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.propagate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        self.grads = grads;
        Ok(())
    }

    /// Hash of every discrete choice on the tape: max-pool winners, ReLU
    /// signs and nearest-neighbour assignments. Two evaluations with equal
    /// signatures lie on the same smooth piece of the recorded function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = Fnv::default();
        for node in &self.nodes {
            match &node.op {
                Op::MaxPool { argmax, .. } => argmax.iter().for_each(|&i| h.word(i as u64)),
                &Op::Relu(x) => self.value(x).as_slice().iter().for_each(|&v| h.word((v > T::zero()) as u64)),
                Op::Chamfer { pattern, .. } => h.word(*pattern),
                _ => {}
            }
        }
        h.0
    }

    /// Gradient of the loss with respect to `v` after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds the gradient of `v` into `t`'s accumulator.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor<T>) {
        if let Some(g) = self.grad(v) {
            t.accumulate_grad(g);
        }
    }

    fn add_grad(&self, grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, dy: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            &Op::Affine { x, w, b } => {
                let (n, p) = self.shape(x);
                let q = self.shape(w).1;
                if self.needs(x) {
                    let mut dx = Matrix::zeros(n, p);
                    T::gemm(
                        n,
                        q,
                        p,
                        T::one(),
                        dy.as_slice(),
                        false,
                        self.value(w).as_slice(),
                        true,
                        T::zero(),
                        dx.as_mut_slice(),
                    );
                    self.add_grad(grads, x, dx);
                }
                if self.needs(w) {
                    let mut dw = Matrix::zeros(p, q);
                    T::gemm(
                        p,
                        n,
                        q,
                        T::one(),
                        self.value(x).as_slice(),
                        true,
                        dy.as_slice(),
                        false,
                        T::zero(),
                        dw.as_mut_slice(),
                    );
                    self.add_grad(grads, w, dw);
                }
                if let Some(b) = b {
                    if self.needs(b) {
                        self.add_grad(grads, b, column_sums(dy));
                    }
                }
            }
            &Op::Add(a, b) => {
                self.add_grad(grads, a, dy.clone());
                self.add_grad(grads, b, dy.clone());
            }
            &Op::Scale(a, s) => self.add_grad(grads, a, dy.scale(s)),
            &Op::Sum(a) => {
                let (r, c) = self.shape(a);
                self.add_grad(grads, a, Matrix::filled(r, c, dy[(0, 0)]));
            }
            &Op::Relu(x) => {
                let mut dx = dy.clone();
                for (g, &y) in dx.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                    if !(y > T::zero()) {
                        *g = T::zero();
                    }
                }
                self.add_grad(grads, x, dx);
            }
            &Op::Softplus(x) => {
                let mut dx = dy.clone();
                for (g, &v) in dx.as_mut_slice().iter_mut().zip(self.value(x).as_slice()) {
                    *g *= sigmoid(v);
                }
                self.add_grad(grads, x, dx);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let (n, q) = xhat.shape();
                let g = self.value(*gamma).as_slice();
                let mut dgamma = Matrix::zeros(1, q);
                let mut dbeta = Matrix::zeros(1, q);
                for i in 0..n {
                    let (dr, hr) = (dy.row(i), xhat.row(i));
                    for j in 0..q {
                        dgamma[(0, j)] += dr[j] * hr[j];
                        dbeta[(0, j)] += dr[j];
                    }
                }
                if self.needs(*x) {
                    let mut dx = Matrix::zeros(n, q);
                    if *train {
                        // dx = inv_std / n * (n * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
                        let nn = T::from_usize(n).unwrap();
                        for i in 0..n {
                            let (dr, hr, out) = (dy.row(i), xhat.row(i), dx.row_mut(i));
                            for j in 0..q {
                                let sum_d = dbeta[(0, j)] * g[j];
                                let sum_dh = dgamma[(0, j)] * g[j];
                                out[j] = inv_std[j] / nn * (nn * dr[j] * g[j] - sum_d - hr[j] * sum_dh);
                            }
                        }
                    } else {
                        for i in 0..n {
                            let (dr, out) = (dy.row(i), dx.row_mut(i));
                            for j in 0..q {
                                out[j] = dr[j] * g[j] * inv_std[j];
                            }
                        }
                    }
                    self.add_grad(grads, *x, dx);
                }
                self.add_grad(grads, *gamma, dgamma);
                self.add_grad(grads, *beta, dbeta);
            }
            Op::MaxPool { x, argmax } => {
                let (n, q) = self.shape(*x);
                let mut dx = Matrix::zeros(n, q);
                for (k, &row) in argmax.iter().enumerate() {
                    let (s, j) = (k / q, k % q);
                    dx[(row, j)] += dy[(s, j)];
                }
                self.add_grad(grads, *x, dx);
            }
            &Op::ConcatCols(a, b) => {
                let (n, p) = self.shape(a);
                let q = self.shape(b).1;
                if self.needs(a) {
                    let da = Matrix::from_fn(n, p, |i, j| dy[(i, j)]);
                    self.add_grad(grads, a, da);
                }
                if self.needs(b) {
                    let db = Matrix::from_fn(n, q, |i, j| dy[(i, p + j)]);
                    self.add_grad(grads, b, db);
                }
            }
            Op::TileSegments { v, counts } => {
                let q = dy.cols();
                let mut dv = Matrix::zeros(counts.len(), q);
                let mut r = 0;
                for (k, &c) in counts.iter().enumerate() {
                    for _ in 0..c {
                        for (acc, &g) in dv.row_mut(k).iter_mut().zip(dy.row(r)) {
                            *acc += g;
                        }
                        r += 1;
                    }
                }
                self.add_grad(grads, *v, dv);
            }
            &Op::SliceRows { x, start } => {
                let (n, q) = self.shape(x);
                let mut dx = Matrix::zeros(n, q);
                let len = dy.rows();
                dx.as_mut_slice()[start * q..(start + len) * q].copy_from_slice(dy.as_slice());
                self.add_grad(grads, x, dx);
            }
            Op::Chamfer { a, b, grad_a, grad_b, .. } => {
                let s = dy[(0, 0)];
                self.add_grad(grads, *a, grad_a.scale(s));
                self.add_grad(grads, *b, grad_b.scale(s));
            }
        }
    }
}

fn column_sums<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        for (acc, &v) in out.as_mut_slice().iter_mut().zip(m.row(i)) {
            *acc += v;
        }
    }
    out
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    // ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|)
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
