//! Deterministic seed derivation so that every randomized stage can hand
//! independent, reproducible streams to its sub-tasks.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer — mixes a 64-bit value into a well-distributed one.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a path of indices.
///
/// Distinct paths give statistically independent seeds; the same path always
/// gives the same seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &p in path {
        s = splitmix64(s ^ p.wrapping_mul(0x9e3779b97f4a7c15));
    }
    s
}

/// ChaCha8 stream for a derived seed (fast, reproducible across platforms).
pub fn rng_from(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
