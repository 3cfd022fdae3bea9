//! Deterministic random streams.
//!
//! Every stochastic component draws from a ChaCha stream keyed by
//! `(master seed, run id, phase)`. Keys are mixed with splitmix64 so that
//! neighbouring run ids produce unrelated streams, and results never depend
//! on how runs are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Phase tags separate the randomness consumed by different parts of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Phase {
    Init = 1,
    Posterior = 2,
    Sde = 3,
    Exact = 4,
    Anneal = 5,
    Resample = 6,
    Projection = 7,
    Ideal = 8,
    Mcmc = 9,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix an arbitrary sequence of words into one 64-bit key.
pub fn derive_key(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x5eed_5eed_5eed_5eed_u64, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Stream for `(seed, id, phase)`.
pub fn stream(seed: u64, id: u64, phase: Phase) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_key(&[seed, id, phase as u64]))
}

/// Stream with one extra coordinate (e.g. an annealing level).
pub fn substream(seed: u64, id: u64, phase: Phase, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_key(&[seed, id, phase as u64, index]))
}

pub fn fill_standard_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

pub fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    fill_standard_normal(rng, &mut v);
    v
}
