//! Seeded random streams.
//!
//! Every random draw in the simulator and learner goes through [`SimRng`], a
//! ChaCha8 generator (counter-based, 64-bit seed, 64-bit stream id). Streams
//! derived from one master seed are independent, so episode `k` of an
//! evaluation always sees the same draws regardless of how many episodes ran
//! before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Name recorded in artifact headers.
pub const RNG_NAME: &str = "chacha8";

/// Stream ids that partition one master seed by purpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Scenario = 1,
    Episode = 2,
    Init = 3,
    Exploration = 4,
    Replay = 5,
    Channel = 6,
    Eval = 7,
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `(purpose, index)` under a master seed.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) ^ index);
    rng
}

/// Per-item seed derived from a master seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of episode `k` within the `purpose` family of a master seed.
pub fn episode_seed(master: u64, purpose: Purpose, k: u64) -> u64 {
    derive_seed(derive_seed(master, purpose as u64), k)
}
