//! Reproducible random streams.
//!
//! Every sample is driven by its own ChaCha8 stream addressed by
//! `(master seed, domain, level, sample index)`. Results therefore depend
//! only on which samples are drawn, never on how they are scheduled across
//! worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for a single trajectory or coupled pair.
pub type PathRng = ChaCha8Rng;

/// SplitMix64 finaliser.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Family of independent streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamFamily {
    seed: u64,
    domain: u32,
    level: u32,
}

impl StreamFamily {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            domain: 0,
            level: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Separates unrelated experiments sharing one master seed.
    pub fn with_domain(self, domain: u32) -> Self {
        Self { domain, ..self }
    }

    pub fn with_level(self, level: u32) -> Self {
        Self { level, ..self }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Stream for sample `index` of this family.
    pub fn stream(&self, index: u64) -> PathRng {
        let key = mix64(self.seed ^ mix64(((self.domain as u64) << 32) | self.level as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(index);
        rng
    }
}
