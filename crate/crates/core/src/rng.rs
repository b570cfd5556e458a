//! Deterministic per-trial random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream for trial `trial` at sample size `m`. Streams depend
/// only on `(root_seed, m, trial)`, never on scheduling.
pub fn trial_rng(root_seed: u64, m: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(((m as u64) << 24) ^ trial as u64);
    rng
}
