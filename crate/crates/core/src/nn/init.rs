use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

/// Half-width of the Glorot-uniform interval.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// I.i.d. samples from `U[-L, L]`, `L = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    assert!(fan_in > 0 && fan_out > 0, "fans must be positive");
    let limit = glorot_limit(fan_in, fan_out) as f32;
    let dist = Uniform::new_inclusive(-limit, limit);
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

pub fn glorot_uniform_seeded(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Tensor {
    glorot_uniform(shape, fan_in, fan_out, &mut ChaCha8Rng::seed_from_u64(seed))
}
