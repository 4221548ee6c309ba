//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` exponential draws with the given mean.
pub fn exponential(n: usize, mean: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| -mean * (1.0 - rng.random::<f64>()).ln()).collect()
}

/// Rounded exponential draws, as cost differences.
pub fn exponential_deltas(n: usize, mean: f64, seed: u64) -> Vec<u64> {
    exponential(n, mean, seed).into_iter().map(|x| x.round() as u64).collect()
}
