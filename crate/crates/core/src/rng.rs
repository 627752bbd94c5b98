//! Counter-based seed derivation.
//!
//! Every random draw in the crate is keyed by `(seed, stream, index)` so that
//! results do not depend on the order in which nodes, edges, models or
//! restarts are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep independent uses of one seed apart.
pub mod stream {
    pub const NODE: u64 = 1;
    pub const EDGE: u64 = 2;
    pub const GRAPH: u64 = 3;
    pub const MESSAGES: u64 = 4;
    pub const SCHEDULE: u64 = 5;
    pub const MODEL: u64 = 6;
    pub const INIT: u64 = 7;
    pub const GIBBS: u64 = 8;
    pub const RESTART: u64 = 9;
    pub const SBP: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a stream tag and an index into a fresh 64-bit seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ index)
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}
