//! Counter-based random streams.
//!
//! A [`RngStream`] is a ChaCha8 key (from the seed) plus a ChaCha stream
//! number. Run `k` of an experiment reads from its own window of that stream,
//! starting at word `k · 2³²`, so every run sees the same draws no matter
//! which thread executes it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifies the generator and substream layout; bump on any change that
/// alters the sample sequence.
pub const ALGORITHM: &str = "chacha8-rand_chacha-0.9/word-window-2^32/v1";

const WINDOW_BITS: u32 = 32;
/// ChaCha positions are 68-bit word counters.
pub const MAX_SUBSTREAMS: u64 = 1 << (68 - WINDOW_BITS);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn algorithm(&self) -> &'static str {
        ALGORITHM
    }

    /// Generator positioned at the start of substream `index`.
    pub fn substream(&self, index: u64) -> ChaCha8Rng {
        assert!(index < MAX_SUBSTREAMS, "substream index {index} out of range");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng.set_word_pos(u128::from(index) << WINDOW_BITS);
        rng
    }

    /// A stream with the same seed and a different stream number.
    pub fn with_stream(&self, stream_id: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id,
        }
    }
}
