//! Deterministic per-trial random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for trial `index` under `seed`. Depends on nothing
/// else, so any partition of trials across threads sees the same draws.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Trials handed to one rayon task.
pub(crate) const CHUNK: u64 = 1 << 14;
