//! Seed derivation.
//!
//! Every random stream in the pipeline is a ChaCha generator whose seed is a
//! pure function of a base seed and a short list of stream identifiers
//! (fold, sentence id, epoch, ...). Streams never share state, so results do
//! not depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with each stream id in turn.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(splitmix64(base), |acc, &s| splitmix64(acc ^ splitmix64(s)))
}

pub fn stream_rng(base: u64, stream: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

/// Domain tags so that e.g. the episode stream for fold 3 never coincides
/// with the dropout stream for step 3.
pub mod tag {
    pub const EPISODE: u64 = 0x01;
    pub const NEGATIVES: u64 = 0x02;
    pub const SHUFFLE: u64 = 0x03;
    pub const DROPOUT: u64 = 0x04;
    pub const INIT: u64 = 0x05;
    pub const HEADS: u64 = 0x06;
    pub const MLM: u64 = 0x07;
    pub const SYNTH: u64 = 0x08;
    pub const PERMUTATION: u64 = 0x09;
}
