//! Per-path random streams.
//!
//! Every path owns an independent ChaCha stream keyed by `(seed, path)`; the
//! k-th Gaussian draw of a path is the increment of step k. Results therefore
//! do not depend on how paths are distributed across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Random stream for one path.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// `n` Brownian increments of variance `dt` for the given path.
pub fn brownian_increments(seed: u64, path: usize, n: usize, dt: f64) -> Vec<f64> {
    let mut rng = path_rng(seed, path);
    let scale = dt.sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect()
}

/// Sums consecutive blocks of `factor` increments, giving the increments of
/// the same Brownian path on a grid `factor` times coarser.
pub fn coarsen(increments: &[f64], factor: usize) -> Vec<f64> {
    assert!(factor >= 1 && increments.len().is_multiple_of(factor));
    increments.chunks(factor).map(|c| c.iter().sum()).collect()
}
