//! Named, counter-based random streams.
//!
//! Every random consumer gets its own ChaCha8 stream keyed by a master seed
//! and a path of labels/indices, e.g. `("rate_vs_power", point, trial,
//! "channel", ap, ue)`. Streams never share state, so results do not depend
//! on evaluation order or worker count, and adding sweep points leaves the
//! draws of existing points untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Key identifying one random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(master_seed: u64) -> Self {
        StreamKey(splitmix64(master_seed))
    }

    pub fn label(self, name: &str) -> Self {
        StreamKey(splitmix64(self.0 ^ fnv1a(name.as_bytes())))
    }

    pub fn index(self, i: u64) -> Self {
        StreamKey(splitmix64(self.0.rotate_left(17) ^ splitmix64(i ^ 0x5851_f42d_4c95_7f2d)))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> SimRng {
        let mut seed = [0u8; 32];
        let mut s = self.0;
        for chunk in seed.chunks_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
