//! Named random sub-streams derived from one user-visible seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent component streams. Each maps to its own ChaCha stream id so
/// that, for example, changing the number of structural steps never shifts
/// the dropout masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split,
    Struct,
    Tasks,
    Init,
    Dropout,
    Schedule,
    Validation,
    Eval,
    /// Synthetic data generation.
    Data,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Split => 1,
            Stream::Struct => 2,
            Stream::Tasks => 3,
            Stream::Init => 4,
            Stream::Dropout => 5,
            Stream::Schedule => 6,
            Stream::Validation => 7,
            Stream::Eval => 8,
            Stream::Data => 9,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Seeds {
    seed: u64,
}

impl Seeds {
    pub fn new(seed: u64) -> Self {
        Seeds { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, stream: Stream) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.id());
        rng
    }

    /// Sub-stream for one work item of a stream (e.g. one task within a
    /// meta step), independent of how work is scheduled across threads.
    pub fn item(&self, stream: Stream, a: u64, b: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed ^ mix(a) ^ mix(b.wrapping_add(0x9e37))));
        rng.set_stream(stream.id());
        rng
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
