//! Seed plumbing. Every stochastic operation takes an explicit generator so
//! that gradient checks and forecast regeneration can replay the same noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numcore::Matrix;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a path of stream identifiers (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mut h = splitmix(base ^ 0x243f_6a88_85a3_08d3);
    for &s in stream {
        h = splitmix(h ^ s.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `rows × cols` matrix of independent standard normal draws, row-major order.
pub fn standard_normal(rng: &mut SimRng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches draw count")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_stream() {
        let a = derive_seed(7, &[1, 2]);
        let b = derive_seed(7, &[2, 1]);
        let c = derive_seed(8, &[1, 2]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, &[1, 2]));
    }

    #[test]
    fn normal_draws_replay_under_same_seed() {
        let x = standard_normal(&mut seeded(3), 4, 2);
        let y = standard_normal(&mut seeded(3), 4, 2);
        assert_eq!(x, y);
    }
}
