//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream keyed by a seed derived here, so results are reproducible across
//! platforms and independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep draws for different purposes decorrelated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Encoder = 1,
    RealBatch = 2,
    Augment = 3,
    Init = 4,
    EvalModel = 5,
    EvalShuffle = 6,
    Toy = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ (stream as u64).rotate_left(56)) ^ index)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(base: u64, stream: Stream, index: u64) -> Rng {
    rng(derive_seed(base, stream, index))
}
