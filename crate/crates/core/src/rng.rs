//! Deterministic random streams.
//!
//! Every unit of work (scan, repetition, grid cell, bootstrap resample) gets
//! its own generator derived from a parent seed and an index, so results do
//! not depend on scheduling. The generator is ChaCha8 from `rand_chacha`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Child seed for work unit `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Child seed tagged by a domain constant, so that e.g. the scan streams and
/// the bootstrap streams under the same seed never coincide.
pub fn derive_tagged(seed: u64, tag: u64, index: u64) -> u64 {
    derive_seed(derive_seed(seed, tag), index)
}

pub fn stream(seed: u64, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

pub(crate) mod tags {
    pub const CELL: u64 = 0x4345_4c4c;
    pub const BOOTSTRAP: u64 = 0x424f_4f54;
    pub const REPETITION: u64 = 0x5245_5045_4154;
}
