//! Counter-based random streams.
//!
//! An [`RngState`] is a ChaCha8 keystream under a 256-bit key. Child streams
//! are derived with [`RngState::split`], which hashes the parent key with a
//! stream id; the child depends only on the parent key and the id, never on
//! how far the parent has been consumed. Replica `r` of an experiment always
//! uses `master.split(r)`, so results do not depend on the worker count or
//! on scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Master seed for a sub-experiment `tag` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag ^ 0x2545_f491_4f6c_dd1d))
}

#[derive(Clone, Debug)]
pub struct RngState {
    key: [u64; 4],
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn from_key(key: [u64; 4]) -> Self {
        let mut seed = [0u8; 32];
        for (chunk, word) in seed.chunks_exact_mut(8).zip(key) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        Self {
            key,
            inner: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Expands a 64-bit master seed into a full key.
    pub fn from_seed(seed: u64) -> Self {
        let mut key = [0u64; 4];
        let mut s = seed;
        for word in key.iter_mut() {
            s = splitmix64(s);
            *word = s;
        }
        Self::from_key(key)
    }

    pub fn key(&self) -> [u64; 4] {
        self.key
    }

    /// Derives an independent child stream. Distinct ids give distinct keys:
    /// every step of the mixing chain is a bijection in `stream_id`.
    pub fn split(&self, stream_id: u64) -> Self {
        let mut acc = splitmix64(stream_id ^ 0x5851_f42d_4c95_7f2d);
        for &word in &self.key {
            acc = splitmix64(acc ^ word);
        }
        let mut key = [0u64; 4];
        let mut s = acc;
        for (j, word) in key.iter_mut().enumerate() {
            s = splitmix64(s ^ self.key[j]);
            *word = s;
        }
        key[0] = splitmix64(acc);
        Self::from_key(key)
    }

    /// Uniform draw on the open interval (0, 1).
    #[inline]
    pub fn open01(&mut self) -> f64 {
        // 52 random mantissa bits, offset by half a step.
        ((self.inner.next_u64() >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
    }
}

impl RngCore for RngState {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
