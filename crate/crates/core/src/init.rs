//! Parameter initialization helpers.

use crate::tensor::Real;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;

/// Uniform in [-b, b] with b = 1/sqrt(fan_in); the usual conv default.
pub fn kaiming_uniform<T: Real, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        T::cast(rng.random_range(-bound..bound))
    })
}
