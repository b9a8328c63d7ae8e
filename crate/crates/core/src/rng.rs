//! Seed derivation for independent random streams.
//!
//! Every stochastic site (initialization, dropout, shuffling, MVO restarts,
//! replicate runs) gets its own ChaCha stream keyed by a seed and a site
//! label, so results do not depend on how many draws other sites made or on
//! which thread ran them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream labels for the stochastic sites.
pub mod site {
    pub const INIT: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const MVO_RESTARTS: u64 = 4;
    pub const SYNTHETIC: u64 = 5;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically derives a child seed, e.g. for replicate `i`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix(splitmix(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// The generator for one stochastic site under `seed`.
pub fn stream(seed: u64, site: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(site);
    rng
}
