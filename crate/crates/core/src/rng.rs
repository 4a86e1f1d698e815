//! Seeded random streams.
//!
//! Each concern (step jitter, metric noise, sweeps, fault draws) gets its own
//! ChaCha stream so toggling one subsystem does not perturb the draws seen by
//! another. That keeps ablation arms on common random numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SimRng = ChaCha8Rng;

/// Named stream identifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Jitter = 1,
    Metrics = 2,
    Sweep = 3,
    FaultMix = 4,
    BaseTemps = 5,
    Escalation = 6,
    Corpus = 7,
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// A stream dedicated to one entity (e.g. one node) within a concern.
pub fn substream(seed: u64, which: Stream, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(which as u64);
    rng
}

pub fn normal(rng: &mut SimRng, mean: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mean;
    }
    let z: f64 = StandardNormal.sample(rng);
    mean + sigma * z
}

/// Multiplicative lognormal factor with median 1 and log-scale `sigma`.
pub fn lognormal_factor(rng: &mut SimRng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    libm::exp(sigma * z)
}

pub fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    rng.random_range(lo..hi)
}

pub fn exponential(rng: &mut SimRng, mean: f64) -> f64 {
    let u: f64 = rng.random::<f64>();
    -mean * libm::log(1.0 - u)
}
