//! Seeded random streams.
//!
//! Every stochastic step (weight init, shuffling, dropout, augmentation)
//! draws from a ChaCha8 stream derived from the run seed and a purpose tag,
//! so results do not depend on the order in which components are built.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// Stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: u64, index: u64) -> Rng {
    let mut s = Rng::seed_from_u64(seed);
    s.set_stream(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
    s
}

pub mod tags {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const PGD: u64 = 6;
    pub const HEAD_INIT: u64 = 7;
}
