//! Named random sub-streams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Sampler = 2,
    Init = 3,
}

/// Independent generator for `(seed, stream, index)`; the index lets a
/// stream be split further, e.g. one sampler stream per epoch.
pub fn stream_rng(seed: u64, stream: Stream, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | index as u64);
    rng
}
