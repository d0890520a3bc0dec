//! Counter-based reproducible random streams.
//!
//! A stream is keyed by `(seed, lane)`. The key is folded through the
//! SplitMix64 finalizer into a 256-bit ChaCha8 key, and ChaCha8 (itself a
//! counter-mode generator) produces the sequence. The `n`-th draw of a
//! stream is therefore a pure function of `(seed, lane, n)`, independent of
//! how other streams were consumed.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Vector;
use crate::error::{Error, Result};

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Topology,
    ProblemInstance,
    Dataset,
    /// Sample tuple for the upper-level hypergradient estimator.
    UpperEstimate,
    /// Sample for the lower-level stochastic gradient.
    LowerGrad,
    /// Expansion of a drawn sample key into concrete noise or minibatches.
    SampleExpansion(u32),
    Diagnostics,
    Custom(u32),
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Topology => 1,
            Purpose::ProblemInstance => 2,
            Purpose::Dataset => 3,
            Purpose::UpperEstimate => 4,
            Purpose::LowerGrad => 5,
            Purpose::SampleExpansion(k) => (6 << 32) | k as u64,
            Purpose::Diagnostics => 7,
            Purpose::Custom(k) => (8 << 32) | k as u64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Lane {
    pub agent: u32,
    pub iter: u64,
    pub purpose: Purpose,
}

impl Lane {
    pub fn new(agent: usize, iter: u64, purpose: Purpose) -> Self {
        Lane {
            agent: agent as u32,
            iter,
            purpose,
        }
    }

    pub fn global(purpose: Purpose) -> Self {
        Lane::new(0, 0, purpose)
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(seed: u64, lane: Lane) -> [u8; 32] {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ lane.agent as u64);
    h = splitmix64(h ^ lane.iter);
    h = splitmix64(h ^ lane.purpose.code());
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        h = splitmix64(h.wrapping_add(i as u64));
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    key
}

/// Deterministic random stream owned by one logical task.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    lane: Lane,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, lane: Lane) -> Self {
        RngStream {
            seed,
            lane,
            rng: ChaCha8Rng::from_seed(derive_key(seed, lane)),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lane(&self) -> Lane {
        self.lane
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// `dim` i.i.d. `N(0, sigma²)` draws.
    pub fn gaussian(&mut self, dim: usize, sigma: f64) -> Result<Vector> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("gaussian: sigma must be finite and >= 0, got {sigma}")));
        }
        if sigma == 0.0 {
            return Ok(Vector::zeros(dim));
        }
        Ok(Vector::from_fn(dim, |_| sigma * self.standard_normal()))
    }

    /// Uniform on `{0, …, k_max − 1}`.
    pub fn uniform_int(&mut self, k_max: usize) -> Result<usize> {
        if k_max == 0 {
            return Err(Error::invalid("uniform_int: k_max must be >= 1"));
        }
        Ok(self.rng.random_range(0..k_max))
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}

pub fn draw_gaussian(s: &mut RngStream, dim: usize, sigma: f64) -> Result<Vector> {
    s.gaussian(dim, sigma)
}

pub fn draw_uniform_int(s: &mut RngStream, k_max: usize) -> Result<usize> {
    s.uniform_int(k_max)
}
