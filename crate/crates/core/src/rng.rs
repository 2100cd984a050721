//! Seeded, counter-based random streams.
//!
//! ChaCha is a counter-mode generator, so the value drawn for a given
//! `(seed, stream)` pair never depends on how many other streams were
//! consumed first. Parallel and serial runs therefore see identical draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for sub-task `stream` (a trial index, a language id).
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
