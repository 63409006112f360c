//! Counter-based random substreams.
//!
//! Each consumer derives its generator from `(seed, index, purpose)`, so work
//! keyed by index can be processed in any order, or in parallel, and still
//! draw the same numbers as a serial run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Pop = 0,
    Htp = 1,
    Msp = 2,
    Init = 3,
    Dropout = 4,
    Shuffle = 5,
    Split = 6,
    Synth = 7,
}

const PURPOSES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    pub seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        SeedStreams { seed }
    }

    pub fn stream(&self, index: u64, purpose: Purpose) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_mul(PURPOSES).wrapping_add(purpose as u64));
        rng
    }
}
