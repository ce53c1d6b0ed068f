//! Seeded random streams. Every random quantity is derived from a 64-bit
//! seed and a stream id with the counter-based ChaCha generator, so any
//! stage can regenerate it without persisting the draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}
