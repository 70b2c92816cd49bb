// SPDX-License-Identifier: Apache-2.0

//! Counter-based deterministic random numbers.
//!
//! Every draw is a pure function of a 64-bit key and a 64-bit counter:
//!
//! ```text
//! z = key + (counter + 1) * 0x9E3779B97F4A7C15      (wrapping)
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! out = z ^ (z >> 31)
//! ```
//!
//! which is the SplitMix64 output function evaluated at an arbitrary point of
//! its Weyl sequence. Sub-streams are keyed with [`derive_key`], so a
//! replicate, trial or run can be regenerated independently of how work is
//! split across threads.

use rand::RngCore;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline(always)]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `counter`-th 64-bit output of the stream identified by `key`.
#[inline(always)]
pub fn hash_at(key: u64, counter: u64) -> u64 {
    mix(key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Uniform double in `[0, 1)` with 53 random bits.
#[inline(always)]
pub fn uniform_at(key: u64, counter: u64) -> f64 {
    (hash_at(key, counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Key for sub-stream `index` of `parent`.
#[inline]
pub fn derive_key(parent: u64, index: u64) -> u64 {
    // Two rounds so that nearby (parent, index) pairs land far apart.
    mix(hash_at(parent, index) ^ 0xD1B5_4A32_D192_ED03)
}

/// Sequential view of one stream, usable wherever a [`rand::Rng`] is expected.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    pub fn substream(parent: u64, index: u64) -> Self {
        Self::new(derive_key(parent, index))
    }

    pub fn next_f64(&mut self) -> f64 {
        let u = uniform_at(self.key, self.counter);
        self.counter += 1;
        u
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let v = hash_at(self.key, self.counter);
        self.counter += 1;
        v
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
