//! Deterministic seed derivation so that per-user work is independent of
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for `(seed, stream, index)`. Streams separate unrelated uses of
/// one master seed (world layout, expert sampling, rollouts, ...).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, stream, index))
}

pub mod stream {
    pub const WORLD: u64 = 1;
    pub const EXPERT: u64 = 2;
    pub const EPR_GENERATE: u64 = 3;
    pub const POLICY_INIT: u64 = 4;
    pub const DISC_INIT: u64 = 5;
    pub const ROLLOUT: u64 = 6;
    pub const TRAIN: u64 = 7;
    pub const FORECAST: u64 = 8;
    pub const SPLIT: u64 = 9;
}
