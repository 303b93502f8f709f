//! Seedable, splittable random streams.
//!
//! Every stochastic step (initialization, shuffling, dropout, synthesis)
//! takes an explicit [`Rng`]. Child streams are derived from a seed and a
//! label, so the same `(seed, label)` pair always yields the same stream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream identified by `(seed, label)`.
    pub fn derive(seed: u64, label: &str) -> Self {
        let mut h = splitmix64(seed);
        for b in label.bytes() {
            h = splitmix64(h ^ u64::from(b));
        }
        Self::seed(h)
    }

    /// Independent stream for an indexed sub-task (fold, epoch, ...).
    pub fn derive_indexed(seed: u64, label: &str, index: u64) -> Self {
        let base = Self::derive(seed, label);
        let mut inner = base.inner;
        inner.set_stream(index);
        Self { inner }
    }

    /// Child stream seeded from this one; advances `self`.
    pub fn split(&mut self) -> Self {
        Self::seed(self.inner.next_u64())
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
