//! Seed derivation.
//!
//! Every random draw in the crate comes from a generator seeded by
//! [`derive_seed`], a SplitMix64-style mix of a parent seed and a stream
//! index. There is no global generator, so any sample or stage can be
//! regenerated in isolation from `(config seed, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used to split a sample seed into independent generators.
pub mod stream {
    pub const TEMPLATE: u64 = 1;
    pub const PHYSICS: u64 = 2;
    pub const DEFORM: u64 = 3;
    pub const CAMERA: u64 = 4;
    pub const SCENE: u64 = 5;
    pub const DATASET: u64 = 6;
    pub const FOLD: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a stream / counter value.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Generator for one `(seed, stream)` pair.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}
