use rand::Rng;

use crate::nn::tensor::Real;

/// Uniform Glorot initialisation, limit `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng>(n: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n)
        .map(|_| T::from_f64(rng.random_range(-limit..limit)))
        .collect()
}
