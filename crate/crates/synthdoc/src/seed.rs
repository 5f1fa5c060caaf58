//! Seed derivation. Every random draw in the generator comes from a ChaCha
//! stream keyed by a seed derived here, so a sample depends only on
//! `(global_seed, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// The splitmix64 output function. It is a bijection on `u64`.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed number `stream` of `parent`. For a fixed parent, distinct
/// streams give distinct children.
pub fn derive(parent: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(parent).wrapping_add(stream.wrapping_mul(GOLDEN)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Stream tags for the parts of one sample.
pub(crate) const STREAM_SIGNATURE: u64 = 1;
pub(crate) const STREAM_LAYOUT: u64 = 2;
pub(crate) const STREAM_DISTORT: u64 = 3;
pub(crate) const STREAM_BACKGROUND_POOL: u64 = 0xb6;
