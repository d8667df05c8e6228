//! Seeded, splittable random streams.
//!
//! Every stochastic step draws from its own [`RngStream`], identified by a
//! master seed and a 64-bit stream id. The id packs the trial index and a
//! purpose tag, so two (trial, purpose) pairs never share a stream.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{check_range, Result};

/// Default master seed.
pub const DEFAULT_SEED: u64 = 1;

const PURPOSE_BITS: u32 = 8;

/// What a stream is used for. The tag occupies the low byte of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Data,
    Split,
    WeightNoise,
    ScalarNoise,
    Resample,
    Coefficients,
    Other(u8),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Data => 1,
            Purpose::Split => 2,
            Purpose::WeightNoise => 3,
            Purpose::ScalarNoise => 4,
            Purpose::Resample => 5,
            Purpose::Coefficients => 6,
            Purpose::Other(t) => 0x80 | u64::from(t),
        }
    }
}

/// Stream id for (trial, purpose). Injective for trial indices below 2^56.
pub fn stream_id(trial: u64, purpose: Purpose) -> u64 {
    debug_assert!(trial < 1 << (64 - PURPOSE_BITS));
    (trial << PURPOSE_BITS) | purpose.tag()
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn for_trial(seed: u64, trial: u64, purpose: Purpose) -> Self {
        Self::new(seed, stream_id(trial, purpose))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// `d` iid N(0, 1) draws.
    pub fn standard_normal_vector(&mut self, d: usize) -> Vec<f64> {
        (0..d).map(|_| self.standard_normal()).collect()
    }

    pub fn bernoulli(&mut self, p: f64) -> Result<bool> {
        check_range("p", p, (0.0..=1.0).contains(&p), "[0, 1]")?;
        Ok(self.rng.random::<f64>() < p)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform index in 0..n. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Uniform random permutation of 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(&mut self.rng);
        v
    }
}
