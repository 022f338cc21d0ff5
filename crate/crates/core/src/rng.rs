//! Named, splittable random streams.
//!
//! Every stochastic operation takes an explicit [`RngStream`]. Child streams
//! are derived by hashing the parent seed with a tag, so the stream a worker
//! consumes depends only on its key (round, client, sample index, ...) and
//! never on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator handed to sampling code.
pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a; stable across platforms and releases.
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream keyed by an integer tag.
    pub fn substream(&self, tag: u64) -> Self {
        Self {
            seed: splitmix64(splitmix64(self.seed) ^ splitmix64(tag.wrapping_add(0x5851_F42D))),
        }
    }

    /// Child stream keyed by a name, e.g. `"instance"` or `"data"`.
    pub fn named(&self, label: &str) -> Self {
        self.substream(hash_label(label))
    }

    /// Child stream keyed by a sequence of integer tags.
    pub fn path(&self, tags: &[u64]) -> Self {
        tags.iter().fold(*self, |s, &t| s.substream(t))
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}
