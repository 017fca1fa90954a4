//! Reproducible, splittable randomness.
//!
//! A [`RandomSource`] is a `(seed, stream_id)` pair. It never holds mutable
//! generator state itself; callers [`fork`](RandomSource::fork) it into child
//! sources and open a [`Stream`] when they need numbers. Per-particle work
//! forks one child per particle index, so the result does not depend on the
//! order in which particles are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// The concrete generator every sampler in the crate draws from.
pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct RandomSource {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource { seed, stream_id: 0 }
    }

    pub fn with_stream(seed: u64, stream_id: u64) -> Self {
        RandomSource { seed, stream_id }
    }

    /// Derives an independent child source labelled by `label`.
    pub fn fork(&self, label: u64) -> Self {
        RandomSource {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(label.wrapping_add(0xA076_1D64_78BD_642F))),
        }
    }

    /// Forks by a textual purpose tag.
    pub fn fork_named(&self, purpose: &str) -> Self {
        let label = purpose
            .bytes()
            .fold(0xCBF2_9CE4_8422_2325_u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01B3));
        self.fork(label)
    }

    /// Opens a generator positioned at the start of this source's stream.
    pub fn stream(&self) -> Stream {
        let mut key = [0u8; 32];
        let mut s = self.seed;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Draws one standard normal variate.
#[inline]
pub fn standard_normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}

/// Fills `out` with independent standard normal variates.
pub fn fill_standard_normal(rng: &mut Stream, out: &mut [f64]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}
