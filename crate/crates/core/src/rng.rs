//! Counter-based random streams.
//!
//! Every `(seed, path, step)` triple addresses its own block of a ChaCha8
//! keystream: the seed selects the key, the path selects the 64-bit stream id
//! and the step selects a fixed window of the block counter. Draws for a given
//! path and step are therefore independent of how paths are scheduled across
//! threads and of how many draws earlier steps consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 32-bit words reserved for one `(path, step)` block.
const WORDS_PER_STEP: u128 = 1 << 24;

/// Stream family for a single seed.
#[derive(Clone, Debug)]
pub struct StreamFamily {
    base: ChaCha8Rng,
}

impl StreamFamily {
    pub fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Generator positioned at the start of path `path`; use [`PathStream::at_step`]
    /// to jump to a step.
    pub fn path(&self, path: usize) -> PathStream {
        let mut rng = self.base.clone();
        rng.set_stream(path as u64);
        PathStream { rng }
    }

    /// Generator for exactly one `(path, step)` block.
    pub fn step(&self, path: usize, step: usize) -> ChaCha8Rng {
        let mut p = self.path(path);
        p.at_step(step);
        p.rng
    }
}

/// A path's stream; repositioned per step.
#[derive(Clone, Debug)]
pub struct PathStream {
    rng: ChaCha8Rng,
}

impl PathStream {
    pub fn at_step(&mut self, step: usize) -> &mut ChaCha8Rng {
        self.rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        &mut self.rng
    }
}
