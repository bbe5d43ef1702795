//! Seeding contract: every random draw is addressed by a seed pair plus a
//! stream id, so a Monte-Carlo sweep produces the same numbers whether its
//! samples are evaluated sequentially or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPair {
    pub master: u64,
    pub replicate: u64,
}

/// Independent sub-streams drawn from one seed pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Noise = 0,
    Perturbation = 1,
    Init = 2,
}

impl SeedPair {
    pub fn new(master: u64, replicate: u64) -> Self {
        Self { master, replicate }
    }

    pub fn rng(&self, stream: Stream) -> ChaCha12Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master.to_le_bytes());
        key[8..16].copy_from_slice(&self.replicate.to_le_bytes());
        key[16] = 0x5a;
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(stream as u64);
        rng
    }

    /// The `index`-th child of this pair. Children of distinct pairs or
    /// distinct indices never share a key.
    pub fn child(&self, index: u64) -> SeedPair {
        SeedPair {
            master: splitmix(self.master ^ splitmix(self.replicate.wrapping_add(0x9e37_79b9))),
            replicate: index,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
