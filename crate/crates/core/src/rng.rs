//! Seed derivation. Every stochastic component draws from its own ChaCha
//! stream keyed by `(seed, stream)`, so results do not depend on the order in
//! which parallel work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream index.
pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng_for(seed: u64, stream: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream))
}

/// Named stream tags so that call sites stay readable.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const PIPELINE: u64 = 2;
    pub const LEARNER: u64 = 3;
    pub const TSNE: u64 = 4;
    pub const KMEANS: u64 = 5;
    pub const BOOTSTRAP: u64 = 6;
    pub const GRID: u64 = 7;
    pub const REPLICATION: u64 = 8;
}
