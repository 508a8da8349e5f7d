//! Finite-difference gradient checking.
//!
//! The numeric side never touches the autodiff tape: callers hand over a
//! black-box evaluation closure, and the helper probes it with central
//! differences. Comparing that against harvested tape gradients is the
//! independent correctness oracle used throughout the test suite.

use crate::scalar::{real, Scalar};

/// Central-difference gradient of `eval` at `point`.
///
/// `eval` must be a pure function of its argument (freeze any noise or
/// dropout masks before calling).
pub fn finite_difference_gradient<F, G>(mut eval: G, point: &[F], step: F) -> Vec<F>
where
    F: Scalar,
    G: FnMut(&[F]) -> F,
{
    let mut probe = point.to_vec();
    let two = real::<F>(2.0);
    (0..point.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = eval(&probe);
            probe[i] = orig - step;
            let minus = eval(&probe);
            probe[i] = orig;
            (plus - minus) / (two * step)
        })
        .collect()
}

/// Worst elementwise mismatch, scaled as `|a-n| / max(1, |a|, |n|)`.
///
/// The `max(1, ..)` floor makes the comparison absolute near zero and
/// relative for large gradients.
pub fn max_relative_error<F: Scalar>(analytic: &[F], numeric: &[F]) -> F {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / F::one().max(a.abs()).max(n.abs()))
        .fold(F::zero(), F::max)
}
