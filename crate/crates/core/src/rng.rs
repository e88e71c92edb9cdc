//! Counter-based random streams.
//!
//! A stream is the keyed map `counter -> mix(mix(key_a + counter * φ) ^ key_b)`
//! where both keys are derived from `(seed, stream_id)`. Draw `i` of a stream
//! depends on nothing but the seed, the stream id and `i`, so replicates and
//! particles can be handed to any worker in any order and still see the same
//! numbers.

use rand::RngCore;
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_MUL: u64 = 0xD1B5_4A32_D192_ED03;

/// SplitMix64 finalizer; a bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream id of child `index` of the particle owning `parent`.
#[inline]
pub fn derive_stream(parent: u64, index: u64) -> u64 {
    mix64(parent ^ mix64(index.wrapping_add(1).wrapping_mul(STREAM_MUL)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub stream_id: u64,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    key: StreamKey,
    key_a: u64,
    key_b: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let s = mix64(seed);
        let key_a = mix64(s ^ stream_id.wrapping_mul(STREAM_MUL));
        let key_b = mix64(stream_id ^ mix64(seed.wrapping_add(GOLDEN)));
        RngStream {
            key: StreamKey { seed, stream_id },
            key_a,
            key_b,
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.key.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.key.stream_id
    }

    /// Number of 64-bit words drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent stream for child `index`, sharing the seed.
    pub fn child(&self, index: u64) -> RngStream {
        RngStream::new(self.key.seed, derive_stream(self.key.stream_id, index))
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    fn word(&mut self) -> u64 {
        let x = mix64(self.key_a.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter = self.counter.wrapping_add(1);
        mix64(x ^ self.key_b)
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.word() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.word()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.word().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
