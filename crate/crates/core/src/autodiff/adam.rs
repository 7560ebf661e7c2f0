use super::Tensor;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments plus an exponentially decayed learning rate
/// (`base_lr * decay^epoch`).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first: Vec<Matrix<T>>,
    pub second: Vec<Matrix<T>>,
    pub step: u64,
    pub epoch: u64,
    pub base_lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[(usize, usize)], base_lr: f64, decay: f64) -> Self {
        Self {
            first: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            step: 0,
            epoch: 0,
            base_lr,
            decay,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn for_params(params: &[&mut Tensor<T>], base_lr: f64, decay: f64) -> Self {
        let shapes: Vec<_> = params.iter().map(|p| p.shape()).collect();
        Self::new(&shapes, base_lr, decay)
    }

    pub fn lr_at(&self, epoch: u64) -> f64 {
        self.base_lr * self.decay.powi(epoch as i32)
    }

    pub fn lr(&self) -> f64 {
        self.lr_at(self.epoch)
    }

    /// Advances the decay schedule by one epoch.
    pub fn end_epoch(&mut self) {
        self.epoch += 1;
    }
}

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient. Gradients are left untouched.
pub fn adam_step<T: Scalar>(params: &mut [&mut Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != state.first.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            detail: format!("{} parameters, {} moment slots", params.len(), state.first.len()),
        });
    }
    for (p, m) in params.iter().zip(&state.first) {
        if p.shape() != m.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!("{:?} vs {:?}", p.shape(), m.shape()),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = state.lr();
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (tb1, tb2) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
    let (ob1, ob2) = (T::from_f64_lossy(1.0 - b1), T::from_f64_lossy(1.0 - b2));
    for (k, p) in params.iter_mut().enumerate() {
        let Some(grad) = p.grad().cloned() else { continue };
        let m = state.first[k].as_mut_slice();
        let v = state.second[k].as_mut_slice();
        for (((w, &g), mk), vk) in p.value.as_mut_slice().iter_mut().zip(grad.as_slice()).zip(m).zip(v) {
            *mk = tb1 * *mk + ob1 * g;
            *vk = tb2 * *vk + ob2 * g * g;
            let mhat = mk.as_f64() / c1;
            let vhat = vk.as_f64() / c2;
            *w -= T::from_f64_lossy(lr * mhat / (vhat.sqrt() + state.eps));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::param(Matrix::from_fn(2, 3, |i, j| (i + j) as f64));
        let before = p.value.clone();
        let mut st = AdamState::for_params(&[&mut p], 1e-3, 1.0);
        adam_step(&mut [&mut p], &mut st).unwrap();
        assert_eq!(p.value, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::param(Matrix::<f64>::zeros(1, 4));
        p.accumulate_grad(&Matrix::from_vec(1, 4, vec![3.0, -0.5, 1e-3, -200.0]).unwrap());
        let lr = 1e-2;
        let mut st = AdamState::for_params(&[&mut p], lr, 1.0);
        adam_step(&mut [&mut p], &mut st).unwrap();
        for (&w, s) in p.value.as_slice().iter().zip([-1.0, 1.0, -1.0, 1.0]) {
            assert!(w.signum() == s);
            assert!(w.abs() <= lr * (1.0 + 1e-6));
            assert!(w.abs() > 0.99 * lr);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = Tensor::param(Matrix::filled(1, 1, 3.0f64));
        let mut st = AdamState::for_params(&[&mut p], 1e-2, 1.0);
        for _ in 0..5000 {
            p.zero_grad();
            let g = Matrix::filled(1, 1, 2.0 * p.value[(0, 0)]);
            p.accumulate_grad(&g);
            adam_step(&mut [&mut p], &mut st).unwrap();
        }
        assert!(p.value[(0, 0)].abs() < 1e-3, "{}", p.value[(0, 0)]);
    }

    #[test]
    fn lr_schedule() {
        let st = AdamState::<f32>::new(&[], 1e-4, 0.995);
        assert!((st.lr_at(100) - 1e-4 * 0.995f64.powi(100)).abs() < 1e-15);
        assert!((st.lr_at(100) - 6.06e-5).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor::param(Matrix::<f64>::zeros(2, 2));
        let mut st = AdamState::new(&[(3, 1)], 1e-3, 1.0);
        assert!(adam_step(&mut [&mut p], &mut st).is_err());
    }
}
