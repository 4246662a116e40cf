//! Seeded random number generation.
//!
//! Every stochastic routine in the crate takes an explicit [`Rng`] handle.
//! The generator is xoshiro256**, seeded through SplitMix64 expansion of a
//! single `u64`, so a given seed yields the same stream on every platform.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type Rng = Xoshiro256StarStar;

pub fn seeded(seed: u64) -> Rng {
    Xoshiro256StarStar::seed_from_u64(seed)
}

/// Seed for the `index`-th independent sub-stream of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    master ^ index
}

/// Seed for a named sub-stream, used where several streams share an index.
pub fn stream_seed(master: u64, stream: u64, index: u64) -> u64 {
    // splitmix-style mixing keeps (stream, index) pairs apart
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
