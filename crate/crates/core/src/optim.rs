//! Adam optimizer over a [`ParamStore`].

use crate::error::{Error, Result};
use crate::graph::ParamStore;
use crate::scalar::{real, Scalar};

/// Adam moment state, one (m, v) pair per parameter element.
#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    /// Number of completed steps (bias correction uses `step + 1`).
    pub step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> AdamState<F> {
    /// State with the conventional defaults beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(store: &ParamStore<F>) -> Self {
        Self::with_hyperparams(store, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(store: &ParamStore<F>, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1: real(beta1),
            beta2: real(beta2),
            epsilon: real(epsilon),
            step: 0,
            m: store.iter().map(|(_, p)| vec![F::zero(); p.numel()]).collect(),
            v: store.iter().map(|(_, p)| vec![F::zero(); p.numel()]).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<F>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<F>] {
        &self.v
    }

    pub fn moments_mut(&mut self) -> (&mut [Vec<F>], &mut [Vec<F>]) {
        (&mut self.m, &mut self.v)
    }

    /// One Adam update from the gradients currently held in `store`.
    ///
    /// Gradients are left untouched; callers decide when to zero them.
    pub fn adam_step(&mut self, store: &mut ParamStore<F>, learning_rate: F) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::shape(
                "adam_step",
                format!("state tracks {} params, store has {}", self.m.len(), store.len()),
            ));
        }
        let t = self.step + 1;
        let bias1 = F::one() - self.beta1.powi(t as i32);
        let bias2 = F::one() - self.beta2.powi(t as i32);
        let one = F::one();
        for (i, pid) in store.param_ids().enumerate().collect::<Vec<_>>() {
            let param = store.value_mut(pid);
            if param.numel() != self.m[i].len() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "param {} has {} elements, state tracks {}",
                        i,
                        param.numel(),
                        self.m[i].len()
                    ),
                ));
            }
            let grads = param
                .grad()
                .ok_or_else(|| Error::domain("adam_step", format!("param {} has no grad slot", i)))?
                .to_vec();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = param.data_mut();
            for k in 0..data.len() {
                let g = grads[k];
                m[k] = self.beta1 * m[k] + (one - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (one - self.beta2) * g * g;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                data[k] = data[k] - learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        self.step = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    /// Minimizing (x-3)^2 by explicit gradient must converge to 3.
    #[test]
    fn adam_converges_on_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let pid = store.register(Tensor::scalar(0.0));
        let mut adam = AdamState::new(&store);
        for _ in 0..4000 {
            store.zero_grad();
            let x = store.value(pid).data()[0];
            let g = 2.0 * (x - 3.0);
            store.value_mut(pid).accumulate_grad(&[g]);
            adam.adam_step(&mut store, 0.01).unwrap();
        }
        let x = store.value(pid).data()[0];
        assert!((x - 3.0).abs() < 1e-4, "adam should reach the minimum, got {}", x);
    }

    /// First step with bias correction moves by exactly lr (up to eps) for a
    /// unit gradient: m_hat = g, v_hat = g^2.
    #[test]
    fn first_step_matches_closed_form() {
        let mut store = ParamStore::<f64>::new();
        let pid = store.register(Tensor::scalar(1.0));
        let mut adam = AdamState::new(&store);
        store.value_mut(pid).accumulate_grad(&[0.5]);
        adam.adam_step(&mut store, 0.1).unwrap();
        let expect = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        let got = store.value(pid).data()[0];
        assert!((got - expect).abs() < 1e-12, "got {}, expected {}", got, expect);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn rejects_param_count_mismatch() {
        let mut store = ParamStore::<f64>::new();
        store.register(Tensor::scalar(0.0));
        let mut adam = AdamState::new(&store);
        store.register(Tensor::scalar(0.0));
        store.zero_grad();
        assert!(adam.adam_step(&mut store, 0.1).is_err());
    }
}
