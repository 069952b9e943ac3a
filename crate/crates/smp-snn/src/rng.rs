//! Seeded, counter-based random streams.
//!
//! All randomness in the crate flows through [`StreamRng`], a ChaCha12
//! generator addressed by (seed, stream id). Independent substreams share a
//! seed and differ only in stream id, so Monte Carlo loops can hand each
//! bundle its own generator and still replay bit-exactly under any worker
//! count. The full generator state round-trips through [`RngState`] for
//! checkpointing.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha12Rng,
}

/// Serializable snapshot of a [`StreamRng`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position split as (high, low) halves of the 128-bit counter.
    pub word_pos: (u64, u64),
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Stream `id` of the generator family identified by `seed`.
    pub fn substream(seed: u64, id: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(id);
        Self { inner }
    }

    /// One standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// A vector of `dim` i.i.d. standard normal draws.
    pub fn normal_vec(&mut self, dim: usize) -> DVector<f64> {
        DVector::from_fn(dim, |_, _| self.normal())
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn state(&self) -> RngState {
        let word_pos = self.inner.get_word_pos();
        RngState {
            seed: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: ((word_pos >> 64) as u64, word_pos as u64),
        }
    }

    pub fn restore(state: &RngState) -> Self {
        let mut inner = ChaCha12Rng::from_seed(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(((state.word_pos.0 as u128) << 64) | state.word_pos.1 as u128);
        Self { inner }
    }
}
