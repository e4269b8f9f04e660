//! Counter-based seed derivation so that parallel work items get
//! independent, schedule-independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `stream` under `master`.
pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    mix(mix(master ^ mix(stream)).wrapping_add(index))
}

pub fn rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, stream, 0))
}

/// Named streams, one per independent consumer of randomness.
pub mod stream {
    pub const PRE_DEMOS: u64 = 1;
    pub const EXPERT_EPISODES: u64 = 2;
    pub const EXPERT_TIES: u64 = 3;
    pub const IDM_INIT: u64 = 4;
    pub const POLICY_INIT: u64 = 5;
    pub const TRAIN_SHUFFLE: u64 = 6;
    pub const ROLLOUTS: u64 = 7;
    pub const SAMPLING: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const SPLIT: u64 = 10;
}
