//! Deterministic per-run random streams.
//!
//! Every Monte-Carlo run draws from independent ChaCha streams keyed by
//! `(master seed, run index, purpose, attempt)`, so results do not depend on
//! the order or thread in which runs execute.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type SimRng = ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Demand = 0,
    Clock = 1,
    PmuNoise = 2,
}

/// Stream for `(run, purpose, attempt)` under `master`. `attempt` counts
/// resamples after a failed power flow.
pub fn stream(master: u64, run: u64, purpose: Purpose, attempt: u32) -> SimRng {
    let mut rng = SimRng::seed_from_u64(master);
    let word = (run << 12) | ((attempt as u64 & 0xff) << 4) | purpose as u64;
    rng.set_stream(word);
    rng
}
