//! Seeded random streams.
//!
//! Every stochastic stage draws from its own ChaCha stream derived from the
//! run seed, so adding draws in one stage never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

/// Stream identifiers for the pipeline stages.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const VIRTUAL: u64 = 2;
    pub const ANNC_INIT: u64 = 3;
    pub const ANNC_BATCH: u64 = 4;
    pub const PAIRS: u64 = 5;
    pub const DISC_INIT: u64 = 6;
    pub const DISC_SHUFFLE: u64 = 7;
    pub const SCENE: u64 = 8;
    pub const GRADCHECK: u64 = 9;
}

pub fn stage_rng(seed: u64, stream: u64) -> StageRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A stream further keyed by an index (per class, per band, ...).
pub fn indexed_rng(seed: u64, stream: u64, index: u64) -> StageRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}
