//! Dense row-major tensors with an optional gradient accumulator.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// An n-dimensional dense array in row-major order.
///
/// A tensor owns its gradient accumulator iff it was marked as requiring
/// gradients; the accumulator always has the same number of elements as the
/// data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad: Option<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {:?} implies {} elements, got {}", shape, expected, data.len()),
            ));
        }
        Ok(Self { shape, data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![F::zero(); n], grad: None }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, F::one())
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n], grad: None }
    }

    pub fn scalar(value: F) -> Self {
        Self { shape: vec![1], data: vec![value], grad: None }
    }

    /// Uniform init in [-bound, bound], the scaled fan-in scheme used for
    /// weight matrices and kernels.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| real::<F>(rng.gen_range(-bound..=bound))).collect();
        Self { shape: shape.to_vec(), data, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Reinterpret the same data under a new shape with equal element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::shape(
                "Tensor::reshaped",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn item(&self) -> F {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().fold(F::zero(), |a, b| a + b)
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    /// Attach (or detach) the gradient accumulator.
    pub fn set_requires_grad(&mut self, requires: bool) {
        if requires && self.grad.is_none() {
            self.grad = Some(vec![F::zero(); self.data.len()]);
        } else if !requires {
            self.grad = None;
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.set_requires_grad(true);
        self
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [F]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = F::zero());
        }
    }

    pub fn accumulate_grad(&mut self, delta: &[F]) {
        let g = self.grad.get_or_insert_with(|| vec![F::zero(); self.data.len()]);
        debug_assert_eq!(g.len(), delta.len());
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += *di;
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, F> {
        self.data.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_shape_data_disagreement() {
        let err = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn shape_product_equals_len() {
        let t = Tensor::<f64>::zeros(&[2, 3, 4]);
        assert_eq!(t.shape().iter().product::<usize>(), t.numel());
    }

    #[test]
    fn grad_present_iff_requires_grad() {
        let mut t = Tensor::<f64>::ones(&[4]);
        assert!(t.grad().is_none());
        t.set_requires_grad(true);
        assert_eq!(t.grad().unwrap(), &[0.0; 4]);
        t.accumulate_grad(&[1.0, 2.0, 3.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().unwrap().iter().all(|&g| g == 0.0));
        t.set_requires_grad(false);
        assert!(t.grad().is_none());
    }
}
