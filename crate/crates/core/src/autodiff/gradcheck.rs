//! Finite-difference verification of reverse-mode gradients.

use super::{Graph, Tensor, Var};
use crate::matrix::Matrix;

/// Step used by [`gradcheck`] unless told otherwise.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Per-input comparison of analytic and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` per input.
    pub rel_errors: Vec<f64>,
    pub analytic: Vec<Matrix<f64>>,
    pub numeric: Vec<Matrix<f64>>,
    /// Probes discarded because a step of `h` changed a discrete choice
    /// (max-pool winner, ReLU sign, nearest neighbour).
    pub skipped: usize,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Builds the scalar function `f` on a fresh graph for the given inputs and
/// compares reverse-mode gradients against central differences with step `h`.
pub fn gradcheck<F>(inputs: &[Matrix<f64>], h: f64, f: F) -> GradReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |vals: &[Matrix<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|m| g.leaf(m.clone(), false)).collect();
        let out = f(&mut g, &vars);
        g.value(out)[(0, 0)]
    };

    let mut g = Graph::new();
    let mut tensors: Vec<Tensor<f64>> = inputs.iter().map(|m| Tensor::param(m.clone())).collect();
    let vars: Vec<Var> = tensors.iter().map(|t| g.input(t)).collect();
    let out = f(&mut g, &vars);
    g.backward(out).expect("scalar output");
    for (v, t) in vars.iter().zip(tensors.iter_mut()) {
        g.accumulate_into(*v, t);
    }
    let analytic: Vec<Matrix<f64>> = tensors.iter().map(|t| t.grad().unwrap().clone()).collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for k in 0..inputs.len() {
        let mut num = Matrix::zeros(inputs[k].rows(), inputs[k].cols());
        for e in 0..inputs[k].as_slice().len() {
            let orig = work[k].as_slice()[e];
            work[k].as_mut_slice()[e] = orig + h;
            let up = eval(&work);
            work[k].as_mut_slice()[e] = orig - h;
            let down = eval(&work);
            work[k].as_mut_slice()[e] = orig;
            num.as_mut_slice()[e] = (up - down) / (2.0 * h);
        }
        numeric.push(num);
    }

    let rel_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let diff = a.as_slice().iter().zip(n.as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let na = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn = n.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            let denom = na.max(nn);
            if denom == 0.0 {
                0.0
            } else {
                diff / denom
            }
        })
        .collect();
    GradReport { rel_errors, analytic, numeric, skipped: 0 }
}
