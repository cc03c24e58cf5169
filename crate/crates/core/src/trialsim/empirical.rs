use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::design::SmartDesign;
use super::estimate::Estimator;
use super::record::generate;
use crate::error::{Error, Result};
use crate::mcb::{check_alpha, critical_values, set_of_best};
use crate::mvn::{CovarianceSpec, MonteCarloConfig};
use crate::power::{exclusion_indices, EffectConfig, MonteCarloEstimate};
use crate::rng::{self, streams};

/// Repetitions for the per-dataset critical values.
pub const DEFAULT_CRITICAL_REPS: usize = 50_000;

#[derive(Debug, Clone)]
pub struct EmpiricalSetup<'a> {
    pub design: &'a dyn SmartDesign,
    pub estimator: &'a dyn Estimator,
    pub delta: f64,
    pub alpha: f64,
    pub effects: EffectConfig,
    pub critical_reps: usize,
    pub seed: u64,
}

impl std::fmt::Debug for dyn SmartDesign + '_ {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Design{}", self.id())
    }
}

impl std::fmt::Debug for dyn Estimator + '_ {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalPower {
    pub n: usize,
    pub estimate: MonteCarloEstimate,
    pub successes: usize,
    /// Replicates that produced a usable estimate.
    pub valid: usize,
    pub singular: usize,
    pub not_positive_definite: usize,
    pub targets: Vec<usize>,
}

enum Outcome {
    Success(bool),
    Singular,
    NotPd,
}

fn replicate_seed(seed: u64, n: usize, r: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(rng::derive_seed(seed, streams::DATA), n as u64), r as u64)
}

/// Fraction of simulated trials whose set of best excludes every regime at
/// least `Δ_min` from the best.
pub fn empirical_power(setup: &EmpiricalSetup<'_>, n: usize, reps: usize) -> Result<EmpiricalPower> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    check_alpha(setup.alpha)?;
    let k = setup.design.edtrs().len();
    if setup.effects.dim() != k {
        return Err(Error::DimensionMismatch { expected: k, actual: setup.effects.dim() });
    }
    setup.effects.validate()?;
    let targets = exclusion_indices(&setup.effects);
    let outcomes: Vec<Result<Outcome>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(setup.seed, n, r);
            let data = generate(setup.design, n, setup.delta, seed);
            let fit = match setup.estimator.fit(setup.design, &data) {
                Ok(f) => f,
                Err(Error::SingularSystem(_)) | Err(Error::SingularGamma) => return Ok(Outcome::Singular),
                Err(e) => return Err(e),
            };
            let spec = match fit.sigma_spec() {
                Ok(s) => s,
                Err(Error::NotPositiveDefinite { .. }) => return Ok(Outcome::NotPd),
                Err(e) => return Err(e),
            };
            let cfg = MonteCarloConfig::new(setup.critical_reps, rng::derive_seed(seed, streams::CRITICAL))?;
            let criticals = match critical_values(&spec, setup.alpha, &cfg) {
                Ok(c) => c,
                Err(Error::DegeneratePair { .. }) => return Ok(Outcome::NotPd),
                Err(e) => return Err(e),
            };
            let best = set_of_best(&fit.theta_hat, &spec, n as u64, &criticals)?;
            Ok(Outcome::Success(targets.iter().all(|&i| !best.contains(i))))
        })
        .collect();
    let (mut successes, mut valid, mut singular, mut not_pd) = (0, 0, 0, 0);
    for o in outcomes {
        match o? {
            Outcome::Success(hit) => {
                valid += 1;
                successes += usize::from(hit);
            }
            Outcome::Singular => singular += 1,
            Outcome::NotPd => not_pd += 1,
        }
    }
    let estimate = if valid == 0 {
        MonteCarloEstimate::exact(f64::NAN, 0, setup.seed)
    } else {
        MonteCarloEstimate::binomial(successes, valid, setup.seed)
    };
    Ok(EmpiricalPower { n, estimate, successes, valid, singular, not_positive_definite: not_pd, targets })
}

/// Average sandwich estimate over `reps` simulated trials of size `n`.
pub fn estimate_sigma_true(
    design: &dyn SmartDesign,
    estimator: &dyn Estimator,
    delta: f64,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<CovarianceSpec> {
    if reps == 0 || n == 0 {
        return Err(Error::InvalidArgument("n and reps must be at least 1".into()));
    }
    let k = design.edtrs().len();
    let sum = (0..reps)
        .into_par_iter()
        .map(|r| {
            let data = generate(design, n, delta, replicate_seed(seed, n, r));
            estimator.fit(design, &data).map(|f| f.sigma_hat)
        })
        .try_reduce(|| DMatrix::zeros(k, k), |a, b| Ok(a + b))?;
    CovarianceSpec::from_matrix(sum / reps as f64)
}
