//! Weight initializers (PyTorch-compatible defaults).

use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Kaiming-uniform with a = sqrt(5), the framework default for conv and
/// linear weights: bound = 1 / sqrt(fan_in).
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha12Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// Matching bias initializer: uniform in +-1/sqrt(fan_in).
pub fn bias_uniform(n: usize, fan_in: usize, rng: &mut ChaCha12Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(data)
}
