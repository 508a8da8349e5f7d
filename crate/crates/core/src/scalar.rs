use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point element type for all tensors and models.
///
/// The crate is generic over this trait so the same code runs in f32 or f64;
/// the project-wide default is f64 (see the `Real` alias at the crate root),
/// which the gradient-check tolerances assume.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Sum + Default + Debug + Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lowering an f64 constant into the working scalar type.
#[inline]
pub fn real<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 constant not representable in scalar type")
}
