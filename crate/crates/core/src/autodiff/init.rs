use rand::Rng;

use crate::autodiff::tensor::Tensor;
use crate::scalar::Scalar;

/// Gaussian weights with standard deviation `sqrt(2 / fan_in)`.
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}
