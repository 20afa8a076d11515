//! Deterministic random streams keyed by `(seed, purpose, counter)`.
//!
//! Each consumer gets its own ChaCha stream, so replaying any part of a run
//! (for example the shuffle of epoch 7) never depends on what else drew
//! random numbers before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Split,
    InnerInit,
    AgentInit,
    TrainShuffle,
    ValShuffle,
    AlphaReset,
    Synthetic,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Split => 0x5b1f_0000_0000_0001,
            Purpose::InnerInit => 0x5b1f_0000_0000_0002,
            Purpose::AgentInit => 0x5b1f_0000_0000_0003,
            Purpose::TrainShuffle => 0x5b1f_0000_0000_0004,
            Purpose::ValShuffle => 0x5b1f_0000_0000_0005,
            Purpose::AlphaReset => 0x5b1f_0000_0000_0006,
            Purpose::Synthetic => 0x5b1f_0000_0000_0007,
        }
    }
}

/// Derives a 64-bit key from a seed, purpose and counter (splitmix64 mixing).
pub fn derive_seed(seed: u64, purpose: Purpose, counter: u64) -> u64 {
    let mut z = seed
        .wrapping_add(purpose.tag().wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(counter.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

pub fn keyed(seed: u64, purpose: Purpose, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, counter))
}
