//! Counter-style random substreams.
//!
//! Every replicate gets its own ChaCha stream addressed by index, so results
//! do not depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn seed(&self) -> u64 {
        self.0
    }

    /// An independent key for sub-task `index`.
    pub fn child(&self, index: u64) -> Self {
        Self(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    /// The generator for stream number `stream` under this key.
    pub fn stream(&self, stream: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }
}
