//! Portable seeded random streams.
//!
//! Every stream is ChaCha8 keyed by `rand_core`'s `seed_from_u64` expansion of a
//! 64-bit seed. Child streams reuse the parent seed and select a distinct ChaCha
//! stream id, so trial `k` of a run always sees the same sequence no matter how
//! trials are scheduled across threads.
//!
//! Uniform variates are derived from raw 64-bit words with fixed formulas
//! ([`SeededStream::next_unit`], [`SeededStream::next_index`]); each consumes
//! exactly one word, which keeps draw accounting exact.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SeededStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
    draws: u64,
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            seed,
            stream,
            rng,
            draws: 0,
        }
    }

    /// Independent child stream `index`. Stream 0 is the root stream itself, so
    /// children are numbered from 1 internally.
    pub fn child(&self, index: u64) -> Self {
        Self::with_stream(self.seed, self.stream.wrapping_add(index).wrapping_add(1))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit words consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn next_word(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_word() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n` by widening multiplication (bias below `n / 2^64`).
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index on an empty range");
        ((u128::from(self.next_word()) * n as u128) >> 64) as usize
    }
}

impl RngCore for SeededStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_word() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let word = self.next_word().to_le_bytes();
            chunk.copy_from_slice(&word[..chunk.len()]);
        }
    }
}
