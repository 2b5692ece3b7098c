//! Seed derivation. Every random stream in the simulator is a ChaCha8
//! generator seeded from a base seed mixed with a few stream identifiers,
//! so results never depend on call order across independent streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a seed from a base seed and a sequence of stream ids.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    stream.iter().fold(mix64(base), |acc, &s| mix64(acc ^ mix64(s)))
}

pub fn rng_for(base: u64, stream: &[u64]) -> SimRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}
