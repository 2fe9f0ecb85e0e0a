//! Deterministic RNG stream derivation.
//!
//! Every random quantity in the toolkit flows from a single master seed.
//! Independent streams (per replicate, per design, per purpose) are derived
//! by mixing path labels into the master seed with SplitMix64, then seeding
//! a counter-based generator. Identical (master_seed, path) always yields
//! the identical stream.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 finalizer; maps a state to a well-distributed 64-bit value.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed from a master seed and a path of labels.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut acc = splitmix64(master);
    for &label in path {
        acc = splitmix64(acc ^ splitmix64(label));
    }
    acc
}

/// A seeded generator for the stream identified by `(master, path)`.
pub fn stream(master: u64, path: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, path))
}
