//! Counter-based seeding of independent random substreams.
//!
//! A master seed is mixed with a tag to select a ChaCha key; replication `i`
//! then uses stream `i` of that key. Stream `i` is the same whatever the total
//! number of replications or the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator handed to every sampling routine.
pub type StreamRng = ChaCha8Rng;

/// Finalizer from SplitMix64.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamFactory {
    key: u64,
}

impl StreamFactory {
    pub fn new(master_seed: u64) -> Self {
        Self { key: mix64(master_seed) }
    }

    /// Child factory for an independent purpose (pilot runs, branches, ...).
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(tag.wrapping_add(0x632b_e59b_d9b4_e019))),
        }
    }

    /// Generator for replication `index`.
    pub fn stream(&self, index: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(index);
        rng
    }
}
