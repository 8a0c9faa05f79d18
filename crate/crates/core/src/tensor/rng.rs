//! Seeded randomness.
//!
//! All random draws go through ChaCha8 (`rand_chacha::ChaCha8Rng`), seeded
//! from a `u64` with `seed_from_u64` and split into independent streams with
//! `set_stream`, so every value is reproducible across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dense::Tensor;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Entries drawn uniformly from `[-bound, bound)`.
pub fn uniform(rng: &mut SeededRng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Standard normal entries times `scale`.
pub fn normal(rng: &mut SeededRng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}
