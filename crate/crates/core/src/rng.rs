//! Seeded random streams.
//!
//! Every source of randomness in a run is derived from the run seed plus a
//! purpose tag, so that changing e.g. the number of dropout draws never shifts
//! the weight initialization or the data split.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags for independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Split = 2,
    Shuffle = 3,
    Dropout = 4,
    Suite = 5,
    Embedding = 6,
    TaskOrder = 7,
}

/// Generator for `(seed, purpose, index)`. `index` separates e.g. tasks.
pub fn stream(seed: u64, purpose: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) ^ index);
    rng
}
