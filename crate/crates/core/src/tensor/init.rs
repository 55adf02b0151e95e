//! Seeded parameter initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Tensor;

/// The one generator type used for every random draw in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const WEIGHT_STD: f32 = 0.02;

/// Normal(0, std²) restricted to ±2·std by rejection.
pub fn trunc_normal(shape: impl Into<Vec<usize>>, std: f32, rng: &mut SeededRng) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let z: f32 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            break z * std;
        }
    })
}

/// Uniform draws in `[lo, hi)`; handy for test fixtures.
pub fn uniform(shape: impl Into<Vec<usize>>, lo: f32, hi: f32, rng: &mut SeededRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}
