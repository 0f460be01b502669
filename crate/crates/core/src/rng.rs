//! Splittable seeding.
//!
//! Every random draw in the crate comes from a [`NoiseStream`], a 64-bit key
//! that can be split into child streams by index or by name. Work is always
//! keyed by *what* is being computed (realization, channel, row), never by
//! which thread computes it, so outputs are identical with or without rayon
//! and for any thread count.
//!
//! Stream layout used by the generator:
//!
//! ```text
//! image seed
//! ├── realization i
//! │   ├── 0 (params)  └── channel c          -> ChannelParams draw
//! │   └── 1 (noise)   └── channel c └── row r -> pixel noise
//! └── u64::MAX (fixed params)  └── channel c
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Concrete generator behind every stream.
pub type StreamRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic, splittable random stream key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NoiseStream(u64);

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream(splitmix64(seed))
    }

    /// Child stream for `index`. Distinct indices give unrelated streams.
    pub fn substream(self, index: u64) -> Self {
        NoiseStream(splitmix64(self.0 ^ splitmix64(index ^ 0x5851_f42d_4c95_7f2d)))
    }

    /// Child stream keyed by a string (FNV-1a over the UTF-8 bytes).
    pub fn named(self, name: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in name.bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.substream(h)
    }

    pub fn key(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
