//! Seeded random streams.
//!
//! Every stochastic component owns a [`StreamRng`] derived from a master seed
//! and a stream index, so trials, nodes and sessions never share state and
//! results are reproducible for a fixed seed regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of child stream `stream` from `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    mix(master.wrapping_add(mix(stream.wrapping_add(0x9e37_79b9_7f4a_7c15))))
}

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for child stream `stream` of `master`.
pub fn stream(master: u64, stream: u64) -> StreamRng {
    seeded(derive_seed(master, stream))
}
