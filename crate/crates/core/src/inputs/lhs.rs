use rand::seq::SliceRandom;
use rand::Rng;

use super::block_rng;

/// Latin hypercube design on (0,1)^dim, row-major `count × dim`.
///
/// Each coordinate has exactly one point in each of `count` equal strata.
pub fn lhs_unit(count: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; count * dim];
    let mut rng = block_rng(seed, u64::MAX);
    let mut perm: Vec<usize> = (0..count).collect();
    for j in 0..dim {
        perm.shuffle(&mut rng);
        for (l, &stratum) in perm.iter().enumerate() {
            // open interval: keep away from the stratum edges at 0 and 1
            let offset: f64 = rng.random_range(f64::EPSILON..1.0);
            out[l * dim + j] = (stratum as f64 + offset) / count as f64;
        }
    }
    out
}
