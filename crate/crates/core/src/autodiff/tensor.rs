use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// A matrix value with an optional gradient accumulator.
///
/// `requires_grad` is equivalent to the accumulator being present. Backward
/// passes add into it, so a tensor used in several places (or across several
/// graphs) sums every contribution until [`Tensor::zero_grad`] is called.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub value: Matrix<T>,
    grad: Option<Matrix<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(value: Matrix<T>, requires_grad: bool) -> Self {
        let grad = requires_grad.then(|| Matrix::zeros(value.rows(), value.cols()));
        Self { value, grad }
    }

    pub fn param(value: Matrix<T>) -> Self {
        Self::new(value, true)
    }

    pub fn constant(value: Matrix<T>) -> Self {
        Self::new(value, false)
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn grad(&self) -> Option<&Matrix<T>> {
        self.grad.as_ref()
    }

    pub fn accumulate_grad(&mut self, g: &Matrix<T>) {
        if let Some(acc) = self.grad.as_mut() {
            acc.add_assign(g);
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(T::zero());
        }
    }
}
