//! Seeded, reproducible random streams.
//!
//! Every Monte Carlo trial draws from its own stream, derived from a master
//! seed and the trial index, so results do not depend on how trials are
//! scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere randomness enters the simulator.
pub type SeededRng = ChaCha8Rng;

/// Builds a generator from a 64-bit seed.
pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Family of independent per-trial streams under one master seed.
#[derive(Debug, Clone)]
pub struct SeedStream {
    base: SeededRng,
}

impl SeedStream {
    pub fn new(master_seed: u64) -> Self {
        Self {
            base: seeded(master_seed),
        }
    }

    /// Generator for trial `index`. Distinct indices give distinct ChaCha
    /// streams under the same key.
    pub fn trial(&self, index: u64) -> SeededRng {
        let mut rng = self.base.clone();
        rng.set_stream(index);
        rng.set_word_pos(0);
        rng
    }
}
