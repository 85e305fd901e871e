//! Seed expansion. Every random stream is derived from one root seed and a
//! tag path, so components never share generator state and a run can be
//! replayed piecewise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use rand_chacha::ChaCha8Rng as StreamRng;

pub mod tags {
    pub const EXOGENOUS: u64 = 0x45584f;
    pub const INITIAL_STATE: u64 = 0x494e4954;
    pub const PLANNER: u64 = 0x504c414e;
    pub const CORPUS: u64 = 0x434f5250;
    pub const EM: u64 = 0x454d;
    pub const INSTANCE: u64 = 0x494e5354;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and a path of tags.
pub fn split_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split_seed(root, path))
}

/// A `(w1, w2) ~ U(0,1) × N(0,1)` pair driving one mixture transition.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoisePair {
    pub w1: f64,
    pub w2: f64,
}

impl NoisePair {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let w1: f64 = rng.gen::<f64>();
        let w2: f64 = StandardNormal.sample(rng);
        NoisePair { w1, w2 }
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_and_replayable() {
        let a = split_seed(7, &[1, 2]);
        assert_eq!(a, split_seed(7, &[1, 2]));
        assert_ne!(a, split_seed(7, &[2, 1]));
        assert_ne!(a, split_seed(8, &[1, 2]));
        let mut r1 = stream(7, &[1]);
        let mut r2 = stream(7, &[1]);
        assert_eq!(NoisePair::draw(&mut r1), NoisePair::draw(&mut r2));
    }
}
