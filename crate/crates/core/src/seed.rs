//! Deterministic seed derivation.
//!
//! Every stochastic draw in a run is keyed by a tuple of integers (run seed,
//! stream tag, cycle, task, replicate). Keys are folded with a splitmix64
//! finalizer, so results never depend on evaluation order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into a single 64-bit seed.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Stable 64-bit key for a string id (FNV-1a).
pub fn key(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A single uniform draw in `[0, 1)` for the given seed.
pub fn uniform(seed: u64) -> f64 {
    (mix(seed) >> 11) as f64 / (1u64 << 53) as f64
}

/// Stream tags keep independent draw families apart.
pub mod stream {
    pub const TRAIN_SAMPLE: u64 = 1;
    pub const TRAIN_ROLLOUT: u64 = 2;
    pub const VALIDATION: u64 = 3;
    pub const EVALUATION: u64 = 4;
    pub const LIFECYCLE: u64 = 5;
    pub const CREATOR: u64 = 6;
    pub const WORLD: u64 = 7;
}
