//! Seed handling. Every random draw in the crate goes through a ChaCha8
//! stream seeded from a 64-bit value, so runs are reproducible across
//! platforms and thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a tag
/// (a width, a purpose constant, a row index).
///
/// `derive(seed, tag) = splitmix64(seed ^ splitmix64(tag))`.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Tag for the independent test split.
pub const TEST_SPLIT_TAG: u64 = 0x07E5_75E7;
/// Tag for the index shuffle of a holdout split.
pub const SHUFFLE_TAG: u64 = 0x5EED_5A1F;
