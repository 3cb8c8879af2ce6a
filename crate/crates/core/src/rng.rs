//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream addressed by
//! `(seed, stream)`, so independent consumers (data, noise, initialisation,
//! probe trials) never share state and results are reproducible bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// A generator for stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a label into a stream id, e.g. `(NOISE, epoch)`.
pub fn stream_id(kind: u64, index: u64) -> u64 {
    kind.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index
}
