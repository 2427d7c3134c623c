use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;

/// Scalar type the signal pipeline is generic over.
///
/// `num_traits::Float` carries everything the math needs (`ln`, `exp`,
/// `abs`, casts); the extra bounds are what sums, accumulation, and error
/// messages require.
pub trait Scalar: Float + Sum + AddAssign + Debug + Display + Default + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lowering an `f64` constant into the working scalar type.
pub(crate) fn c<F: Scalar>(x: f64) -> F {
    F::from(x).expect("f64 constant must be representable in the scalar type")
}

/// Numerically stable `log(sum(exp(xs)))`.
pub(crate) fn log_sum_exp<F: Scalar>(xs: &[F]) -> F {
    let hi = xs.iter().cloned().fold(F::neg_infinity(), F::max);
    if hi == F::neg_infinity() {
        return F::neg_infinity();
    }
    let sum: F = xs.iter().map(|&x| (x - hi).exp()).sum();
    hi + sum.ln()
}
