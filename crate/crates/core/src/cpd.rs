//! Classic non-rigid Coherent Point Drift: a Gaussian mixture whose centroids
//! are the source points moved by a smooth kernel field, fitted by EM.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::model::DisplacementField;

/// Ridge added to the kernel system before factorization.
pub const SOLVE_RIDGE: f64 = 1e-9;
/// Variance floor; reaching it means the sets coincide and the run stops.
pub const SIGMA2_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpdConfig {
    /// Width of the Gaussian motion-coherence kernel.
    pub beta: f64,
    /// Weight of the coherence regularizer.
    pub lambda: f64,
    /// Weight of the uniform outlier component, in `[0, 1)`.
    pub w: f64,
    pub max_iters: usize,
    /// Stop when the relative change of the variance falls below this.
    pub tol: f64,
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self { beta: 2.0, lambda: 2.0, w: 0.1, max_iters: 150, tol: 1e-8 }
    }
}

impl CpdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("cpd: {m}")));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(0.0..1.0).contains(&self.w) {
            return bad("w must lie in [0, 1)");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CpdResult {
    pub transformed: PointSet,
    /// Kernel coefficients; the displacement is `G W`.
    pub w: DMatrix<f64>,
    pub sigma2_trace: Vec<f64>,
    pub iterations: usize,
    /// Objective at the start of each iteration.
    pub nll_trace: Vec<f64>,
}

impl CpdResult {
    pub fn field(&self, source: &PointSet) -> Result<DisplacementField> {
        let drifts = crate::matrix::Matrix::from_fn(source.len(), source.dim(), |i, d| {
            self.transformed.point(i)[d] - source.point(i)[d]
        });
        DisplacementField::new(source, drifts)
    }
}

fn to_dmatrix(ps: &PointSet) -> DMatrix<f64> {
    DMatrix::from_row_slice(ps.len(), ps.dim(), ps.as_flat())
}

fn from_dmatrix(m: &DMatrix<f64>) -> Result<PointSet> {
    let mut flat = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        flat.extend(m.row(i).iter());
    }
    PointSet::new(m.ncols(), flat).map_err(|_| Error::NonFinite("cpd: transformed points not finite".into()))
}

/// Gaussian kernel `G_ij = exp(-|y_i - y_j|^2 / (2 beta^2))` over the source.
pub fn gaussian_kernel(source: &PointSet, beta: f64) -> DMatrix<f64> {
    let m = source.len();
    let k = 2.0 * beta * beta;
    DMatrix::from_fn(m, m, |i, j| (-crate::geometry::sq_dist(source.point(i), source.point(j)) / k).exp())
}

fn sq_dists(x: &DMatrix<f64>, t: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(t.nrows(), x.nrows(), |m, n| (t.row(m) - x.row(n)).norm_squared())
}

fn outlier_log_const(d: usize, sigma2: f64, w: f64, m: usize, n: usize) -> f64 {
    if w == 0.0 {
        f64::NEG_INFINITY
    } else {
        0.5 * d as f64 * (2.0 * std::f64::consts::PI * sigma2).ln() + (w / (1.0 - w)).ln() + (m as f64 / n as f64).ln()
    }
}

/// Per-target `log(sum_m exp(-|x_n - T_m|^2 / 2 sigma2) + c)` and the
/// matching posteriors (`m x n`).
fn e_step(dists: &DMatrix<f64>, sigma2: f64, log_c: f64) -> (Vec<f64>, DMatrix<f64>) {
    let (m, n) = dists.shape();
    let mut lse = vec![0.0; n];
    let mut post = DMatrix::zeros(m, n);
    for j in 0..n {
        let col = dists.column(j);
        let hi = col.iter().map(|d| -d / (2.0 * sigma2)).fold(log_c, f64::max);
        let mut s = (log_c - hi).exp();
        for i in 0..m {
            let e = (-col[i] / (2.0 * sigma2) - hi).exp();
            post[(i, j)] = e;
            s += e;
        }
        lse[j] = hi + s.ln();
        for i in 0..m {
            post[(i, j)] /= s;
        }
    }
    (lse, post)
}

/// Negative log-likelihood of `target` under the mixture centered on
/// `centroids` with variance `sigma2` and outlier weight `w`, dropping
/// parameter-free constants, plus an already-evaluated coherence penalty.
pub fn cpd_nll(target: &PointSet, centroids: &PointSet, sigma2: f64, w: f64, penalty: f64) -> Result<f64> {
    if target.dim() != centroids.dim() {
        return Err(Error::DimMismatch(target.dim(), centroids.dim()));
    }
    let x = to_dmatrix(target);
    let t = to_dmatrix(centroids);
    let log_c = outlier_log_const(x.ncols(), sigma2, w, t.nrows(), x.nrows());
    let (lse, _) = e_step(&sq_dists(&x, &t), sigma2, log_c);
    let nll = nll_from(&lse, x.nrows(), x.ncols(), sigma2, penalty);
    if nll.is_finite() {
        Ok(nll)
    } else {
        Err(Error::NonFinite("cpd: objective".into()))
    }
}

fn nll_from(lse: &[f64], n: usize, d: usize, sigma2: f64, penalty: f64) -> f64 {
    -lse.iter().sum::<f64>() + 0.5 * (n * d) as f64 * sigma2.ln() + penalty
}

pub fn cpd_register(source: &PointSet, target: &PointSet, cfg: &CpdConfig) -> Result<CpdResult> {
    cfg.validate()?;
    if source.dim() != target.dim() {
        return Err(Error::DimMismatch(source.dim(), target.dim()));
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptySet);
    }
    let (m, n, d) = (source.len(), target.len(), source.dim());
    let x = to_dmatrix(target);
    let y = to_dmatrix(source);
    let g = gaussian_kernel(source, cfg.beta);
    let mut w = DMatrix::zeros(m, d);
    let mut t = y.clone();
    let mut sigma2 = sq_dists(&x, &t).sum() / (d * m * n) as f64;
    if sigma2 <= SIGMA2_FLOOR {
        sigma2 = SIGMA2_FLOOR;
    }
    let mut sigma2_trace = vec![sigma2];
    let mut nll_trace = Vec::new();
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let penalty = 0.5 * cfg.lambda * (w.transpose() * &g * &w).trace();
        let log_c = outlier_log_const(d, sigma2, cfg.w, m, n);
        let (lse, p) = e_step(&sq_dists(&x, &t), sigma2, log_c);
        let nll = nll_from(&lse, n, d, sigma2, penalty);
        if !nll.is_finite() {
            return Err(Error::NonFinite(format!("cpd: objective at iteration {iterations}")));
        }
        nll_trace.push(nll);
        iterations += 1;

        let p1 = p.column_sum();
        let pt1 = p.row_sum();
        let np: f64 = p1.sum();
        let px = &p * &x;
        let mut a = DMatrix::from_fn(m, m, |i, j| p1[i] * g[(i, j)]);
        for i in 0..m {
            a[(i, i)] += cfg.lambda * sigma2 + SOLVE_RIDGE;
        }
        let rhs = DMatrix::from_fn(m, d, |i, k| px[(i, k)] - p1[i] * y[(i, k)]);
        w = a.lu().solve(&rhs).ok_or_else(|| Error::SingularSystem("cpd: kernel system".into()))?;
        t = &y + &g * &w;

        let xpx: f64 = (0..n).map(|j| pt1[j] * x.row(j).norm_squared()).sum();
        let cross: f64 = px.component_mul(&t).sum();
        let tpt: f64 = (0..m).map(|i| p1[i] * t.row(i).norm_squared()).sum();
        let next = (xpx - 2.0 * cross + tpt) / (np * d as f64);
        if !next.is_finite() || np <= 0.0 {
            return Err(Error::NonFinite(format!("cpd: variance diverged at iteration {iterations}")));
        }
        if next <= SIGMA2_FLOOR {
            sigma2_trace.push(SIGMA2_FLOOR);
            break;
        }
        let change = (sigma2 - next).abs() / sigma2;
        sigma2 = next;
        sigma2_trace.push(sigma2);
        if change < cfg.tol {
            break;
        }
    }
    Ok(CpdResult { transformed: from_dmatrix(&t)?, w, sigma2_trace, iterations, nll_trace })
}
