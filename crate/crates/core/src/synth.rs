//! Seeded synthetic corpora so tests and demos need no downloads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};
use crate::vectors::VectorDataset;

/// `n` i.i.d. standard normal points in `dim` dimensions.
pub fn gaussian(n: usize, dim: usize, seed: u64) -> VectorDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    VectorDataset::new(dim, data).expect("normal samples are finite")
}

/// Mixture of `clusters` isotropic Gaussians with centers drawn from
/// N(0, 1) and per-cluster standard deviation `spread`. Cluster membership
/// is round-robin so every cluster gets `n / clusters` points (±1).
pub fn gaussian_mixture(
    n: usize,
    dim: usize,
    clusters: usize,
    spread: f32,
    seed: u64,
) -> Result<VectorDataset> {
    ensure!(n >= 1 && dim >= 1, "need at least one point and one dimension");
    ensure!(clusters >= 1, "need at least one cluster");
    ensure!(spread.is_finite() && spread > 0.0, "spread must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f32> = (0..clusters * dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        let c = &centers[(i % clusters) * dim..(i % clusters + 1) * dim];
        for &m in c {
            let z: f32 = rng.sample(StandardNormal);
            data.push(m + spread * z);
        }
    }
    VectorDataset::new(dim, data)
}
