//! Upper bound on how fast predicted drifts can change with the source point.

use super::params::NetworkParams;
use crate::autodiff::BN_EPS;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const POWER_ITERATIONS: usize = 50;
pub const POWER_TOL: f64 = 1e-9;

/// Largest singular value by power iteration on `W^T W` (or `W W^T`,
/// whichever is smaller).
pub fn spectral_norm(w: &Matrix<f64>) -> f64 {
    let small = if w.cols() <= w.rows() { w.clone() } else { w.transpose() };
    let gram = small.transpose().matmul(&small).expect("conforming");
    let n = gram.rows();
    if n == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let mut next: Vec<f64> = (0..n).map(|i| gram.row(i).iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        let converged = (norm - lambda).abs() <= POWER_TOL * norm;
        lambda = norm;
        v = next;
        if converged {
            break;
        }
    }
    lambda.sqrt()
}

/// Eval-mode batch-norm gain: `max_j |gamma_j| / sqrt(var_j + eps)`.
pub fn batchnorm_gain<T: Scalar>(gamma: &[T], running_var: &[T]) -> f64 {
    gamma.iter().zip(running_var).map(|(g, v)| g.as_f64().abs() / (v.as_f64() + BN_EPS).sqrt()).fold(0.0, f64::max)
}

/// Product of per-stage operator-norm bounds of the chain `x -> dx`.
///
/// Each entry is a weight matrix and an optional batch-norm gain applied
/// after it. Activations (ReLU, SoftPlus) are 1-Lipschitz and contribute 1.
pub fn chain_bound(stages: &[(Matrix<f64>, Option<f64>)]) -> f64 {
    stages.iter().map(|(w, gain)| spectral_norm(w) * gain.unwrap_or(1.0)).product()
}

/// Lipschitz bound of the drift map over source coordinates, with the
/// descriptors held fixed. Only the coordinate rows of the first morph
/// weight act on `x`.
pub fn lipschitz_bound<T: Scalar>(params: &NetworkParams<T>) -> f64 {
    let stages: Vec<(Matrix<f64>, Option<f64>)> = params
        .morph
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let w: Matrix<f64> = l.weight.value.cast();
            let w = if k == 0 {
                Matrix::from_vec(params.dim, w.cols(), w.as_slice()[..params.dim * w.cols()].to_vec()).unwrap()
            } else {
                w
            };
            let gain = l.bn.as_ref().map(|b| batchnorm_gain(b.gamma.value.as_slice(), &b.stats.running_var));
            (w, gain)
        })
        .collect();
    chain_bound(&stages)
}
