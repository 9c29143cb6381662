//! Seedable random streams.
//!
//! Every run owns one [`RandomStream`], a ChaCha8 generator keyed by a master
//! seed and selected by a 64-bit stream number. Streams with different stream
//! numbers are independent, so a sweep can hand stream `i` to cell `i` and get
//! the same draws no matter how cells are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream numbers at or above this offset are reserved for instance generation.
pub const INSTANCE_STREAM_BASE: u64 = 1 << 63;

#[derive(Debug, Clone)]
pub struct RandomStream {
    inner: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(master_seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream);
        RandomStream { inner }
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// One Bernoulli draw with success probability `p`; consumes exactly one
    /// uniform.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        self.inner.gen_range(lo..=hi)
    }
}
