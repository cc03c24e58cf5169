use serde::{Deserialize, Serialize};

use super::covariance::CovarianceSpec;
use crate::error::{Error, Result};
use crate::rng;

/// Monte Carlo repetitions and master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub m: usize,
    pub seed: u64,
}

impl MonteCarloConfig {
    pub const MIN_REPS: usize = 1000;
    pub const DEFAULT_REPS: usize = 1_000_000;

    pub fn new(m: usize, seed: u64) -> Result<Self> {
        let cfg = Self { m, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < Self::MIN_REPS {
            return Err(Error::TooFewRepetitions(self.m));
        }
        Ok(())
    }

    /// Same repetition count with a seed derived for a sub-computation.
    pub fn derive(&self, stream: u64) -> Self {
        Self { m: self.m, seed: rng::derive_seed(self.seed, stream) }
    }

    pub fn with_reps(&self, m: usize) -> Self {
        Self { m, seed: self.seed }
    }
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { m: Self::DEFAULT_REPS, seed: 20_190_417 }
    }
}

/// `m` draws from N(0, Σ), stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnSample {
    draws: Vec<f64>,
    dim: usize,
    m: usize,
    seed: u64,
}

impl MvnSample {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.draws[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::Chunks<'_, f64> {
        self.draws.chunks(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.draws
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.draws
    }
}

pub fn sample_mvn(spec: &CovarianceSpec, cfg: &MonteCarloConfig) -> Result<MvnSample> {
    cfg.validate()?;
    Ok(sample_unchecked(spec, cfg.m, cfg.seed))
}

/// Sampling without the repetition floor; used internally where the caller
/// has already validated or deliberately runs small batches.
pub(crate) fn sample_unchecked(spec: &CovarianceSpec, m: usize, seed: u64) -> MvnSample {
    let factor = spec.factor();
    let dim = spec.dim();
    let rank = factor.rank().max(1);
    let draws = rng::mapped_normals(m, rank, dim, seed, |g, out| {
        if factor.rank() == 0 {
            out.fill(0.0);
        } else {
            factor.apply(g, out)
        }
    });
    MvnSample { draws, dim, m, seed }
}
