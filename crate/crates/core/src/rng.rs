//! Named, seeded random streams. Each stochastic subsystem draws from its
//! own stream so adding draws in one never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for `(seed, name)`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the parent seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix64(seed ^ mix64(h))
}

/// Child seed for an indexed sub-task (episode `i` of a sweep, etc).
pub fn derive_indexed(seed: u64, name: &str, index: u64) -> u64 {
    mix64(derive_seed(seed, name) ^ mix64(index.wrapping_add(1)))
}

pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}

#[derive(Debug, Clone)]
pub struct RngStreams {
    pub noise: ChaCha8Rng,
    pub init: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            noise: stream(seed, "accel-noise"),
            init: stream(seed, "init"),
        }
    }
}
