//! Monte Carlo power of the MCB procedure to exclude every regime at least
//! `Δ_min` worse than the best.
//!
//! The implemented power is the lower bound obtained by comparing each
//! inferior regime against the best one only:
//!
//! `P(∩_{i: Δ_i ≥ Δ_min} { W_i < −c_i + Δ_i √n / σ_iN√n })`, `W ~ N(0, Σ̃)`
//!
//! with `Σ̃_ij = (Σ_ij − Σ_iN − Σ_jN + Σ_NN) / (σ_iN√n · σ_jN√n)`. None of
//! `W`, `c_i` or `σ_iN√n` depend on `n`, so one draw matrix serves a whole
//! grid of sample sizes and the resulting curve is exactly monotone.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcb::{self, argmax, critical_values, diff_scale, CriticalValues, Direction, DEGENERATE_SCALE, SECTIONS};
use crate::mvn::{sample_unchecked, CovarianceSpec, MonteCarloConfig};
use crate::rng::{self, streams, GENERATOR};

/// Effect sizes `Δ_i = θ_best − θ_i` and the clinically meaningful threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectConfig {
    pub delta: Vec<f64>,
    pub delta_min: f64,
    pub best_index: usize,
    /// When set, `delta` holds standardized effects `δ_i` with `Δ_i = δ_i·σ_iN√n`.
    #[serde(default)]
    pub standardized: bool,
}

impl EffectConfig {
    pub fn new(delta: Vec<f64>, delta_min: f64, best_index: usize) -> Result<Self> {
        let e = Self { delta, delta_min, best_index, standardized: false };
        e.validate()?;
        Ok(e)
    }

    /// Effects from an estimate vector; the best regime is the argmax after
    /// orienting by `direction`.
    pub fn from_theta(theta: &[f64], direction: Direction, delta_min: f64) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::EmptyInput);
        }
        let oriented = direction.orient(theta);
        let best = argmax(&oriented);
        let delta = oriented.iter().map(|t| oriented[best] - t).collect();
        Self::new(delta, delta_min, best)
    }

    /// Effects given without an explicit best index; the best is the unique
    /// zero entry.
    pub fn from_delta(delta: Vec<f64>, delta_min: f64) -> Result<Self> {
        let zeros: Vec<usize> = delta.iter().enumerate().filter(|(_, d)| **d == 0.0).map(|(i, _)| i).collect();
        match zeros.as_slice() {
            [best] => Self::new(delta, delta_min, *best),
            [] => Err(Error::InvalidEffects("no entry of delta is 0; cannot identify the best EDTR".into())),
            _ => Err(Error::InvalidEffects(
                "several entries of delta are 0; pass the best index explicitly".into(),
            )),
        }
    }

    /// Every inferior regime at the same distance `delta` from `best_index`,
    /// with `Δ_min = delta`.
    pub fn uniform(dim: usize, best_index: usize, delta: f64) -> Result<Self> {
        let d = (0..dim).map(|i| if i == best_index { 0.0 } else { delta }).collect();
        Self::new(d, delta, best_index)
    }

    pub fn standardized(mut self) -> Self {
        self.standardized = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.best_index >= self.delta.len() {
            return Err(Error::InvalidEffects(format!(
                "best index {} out of range for {} EDTRs",
                self.best_index,
                self.delta.len()
            )));
        }
        if self.delta[self.best_index] != 0.0 {
            return Err(Error::InvalidEffects("delta at the best index must be 0".into()));
        }
        if let Some((i, d)) = self.delta.iter().enumerate().find(|(_, d)| !(**d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidEffects(format!("delta[{i}] = {d} must be finite and non-negative")));
        }
        if !(self.delta_min > 0.0) || !self.delta_min.is_finite() {
            return Err(Error::InvalidEffects(format!("delta_min = {} must be positive", self.delta_min)));
        }
        Ok(())
    }

    /// Converts standardized effects to outcome units; a no-op otherwise.
    pub fn materialize(&self, spec: &CovarianceSpec) -> Result<EffectConfig> {
        self.validate()?;
        if self.delta.len() != spec.dim() {
            return Err(Error::DimensionMismatch { expected: spec.dim(), actual: self.delta.len() });
        }
        if !self.standardized {
            return Ok(self.clone());
        }
        let b = self.best_index;
        let delta = self
            .delta
            .iter()
            .enumerate()
            .map(|(i, d)| if i == b { 0.0 } else { d * diff_scale(spec, i, b) })
            .collect();
        Ok(EffectConfig { delta, delta_min: self.delta_min, best_index: b, standardized: false })
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }
}

/// Indices targeted for exclusion: `{i : Δ_i ≥ Δ_min}`.
pub fn exclusion_indices(effects: &EffectConfig) -> Vec<usize> {
    effects
        .delta
        .iter()
        .enumerate()
        .filter(|(i, d)| *i != effects.best_index && **d >= effects.delta_min)
        .map(|(i, _)| i)
        .collect()
}

/// `σ_iN√n` for each index, erroring on degenerate pairs.
pub(crate) fn scales_to_best(spec: &CovarianceSpec, best: usize, indices: &[usize]) -> Result<Vec<f64>> {
    indices
        .iter()
        .map(|&i| {
            let s = diff_scale(spec, i, best);
            if s < DEGENERATE_SCALE {
                Err(Error::DegeneratePair { i, j: best, scale: s })
            } else {
                Ok(s)
            }
        })
        .collect()
}

/// `Σ_ij − Σ_iN − Σ_jN + Σ_NN` over the given indices.
pub(crate) fn contrast_covariance(spec: &CovarianceSpec, best: usize, indices: &[usize]) -> DMatrix<f64> {
    let b = best;
    DMatrix::from_fn(indices.len(), indices.len(), |r, c| {
        let (i, j) = (indices[r], indices[c]);
        spec.get(i, j) - spec.get(i, b) - spec.get(j, b) + spec.get(b, b)
    })
}

/// Correlation matrix `Σ̃` of the standardized contrasts against the best,
/// restricted to the exclusion set.
pub fn power_covariance(spec: &CovarianceSpec, effects: &EffectConfig) -> Result<DMatrix<f64>> {
    let effects = effects.materialize(spec)?;
    let idx = exclusion_indices(&effects);
    let s = scales_to_best(spec, effects.best_index, &idx)?;
    let mut m = contrast_covariance(spec, effects.best_index, &idx);
    for r in 0..idx.len() {
        for c in 0..idx.len() {
            m[(r, c)] /= s[r] * s[c];
        }
    }
    Ok(m)
}

/// A Monte Carlo probability with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub value: f64,
    pub mc_se: f64,
    pub m: usize,
    pub seed: u64,
    pub generator: String,
}

impl MonteCarloEstimate {
    pub fn binomial(successes: usize, m: usize, seed: u64) -> Self {
        let value = if m == 0 { 0.0 } else { successes as f64 / m as f64 };
        let mc_se = if m == 0 { 0.0 } else { (value * (1.0 - value) / m as f64).sqrt() };
        Self { value, mc_se, m, seed, generator: GENERATOR.to_string() }
    }

    pub fn exact(value: f64, m: usize, seed: u64) -> Self {
        Self { value, mc_se: 0.0, m, seed, generator: GENERATOR.to_string() }
    }

    /// Lower and upper ends of the 95% Monte Carlo band.
    pub fn band95(&self) -> (f64, f64) {
        ((self.value - 1.96 * self.mc_se).max(0.0), (self.value + 1.96 * self.mc_se).min(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warning {
    /// No regime is `Δ_min` or more below the best; power is trivially 1.
    NothingToExclude,
    /// The sizing quantile is non-positive: any `n ≥ 1` already reaches the target.
    AlreadyPowered,
    /// Verification of a sample size needed a second pass with doubled `m`.
    RepetitionsDoubled,
}

/// Precomputed draws for evaluating the power function at many `n`.
#[derive(Debug, Clone)]
pub struct PowerEngine {
    effects: EffectConfig,
    exclusion: Vec<usize>,
    criticals: CriticalValues,
    scales: Vec<f64>,
    /// Row-major `m × M` draws of `W ~ N(0, Σ̃)`.
    draws: Vec<f64>,
    cfg: MonteCarloConfig,
}

impl PowerEngine {
    pub fn new(spec: &CovarianceSpec, effects: &EffectConfig, alpha: f64, cfg: &MonteCarloConfig) -> Result<Self> {
        cfg.validate()?;
        let criticals = critical_values(spec, alpha, cfg)?;
        Self::with_criticals(spec, effects, criticals, cfg)
    }

    /// Uses caller-supplied critical values (for instance shared across a sweep).
    pub fn with_criticals(
        spec: &CovarianceSpec,
        effects: &EffectConfig,
        criticals: CriticalValues,
        cfg: &MonteCarloConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        mcb::check_alpha(criticals.alpha)?;
        let effects = effects.materialize(spec)?;
        if criticals.len() != spec.dim() {
            return Err(Error::DimensionMismatch { expected: spec.dim(), actual: criticals.len() });
        }
        let exclusion = exclusion_indices(&effects);
        let scales = scales_to_best(spec, effects.best_index, &exclusion)?;
        let seed = rng::derive_seed(cfg.seed, streams::POWER);
        let draws = match exclusion.len() {
            0 => Vec::new(),
            // Σ̃ is the 1×1 matrix [1]
            1 => rng::standard_normals(cfg.m, 1, seed),
            _ => {
                let tilde = CovarianceSpec::from_matrix(power_covariance(spec, &effects)?)?;
                sample_unchecked(&tilde, cfg.m, seed).into_vec()
            }
        };
        Ok(Self { effects, exclusion, criticals, scales, draws, cfg: *cfg })
    }

    pub fn exclusion(&self) -> &[usize] {
        &self.exclusion
    }

    pub fn criticals(&self) -> &CriticalValues {
        &self.criticals
    }

    pub fn effects(&self) -> &EffectConfig {
        &self.effects
    }

    pub fn mc(&self) -> &MonteCarloConfig {
        &self.cfg
    }

    /// Row-major `m × M` draws of `W`.
    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    /// `σ_iN√n` for each exclusion target.
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Per-target thresholds `−c_i + Δ_i √n / σ_iN√n`.
    pub fn thresholds(&self, n: u64) -> Vec<f64> {
        self.thresholds_for(&self.criticals.values, n)
    }

    fn thresholds_for(&self, criticals: &[f64], n: u64) -> Vec<f64> {
        let root_n = (n as f64).sqrt();
        self.exclusion
            .iter()
            .zip(&self.scales)
            .map(|(&i, s)| -criticals[i] + self.effects.delta[i] * root_n / s)
            .collect()
    }

    fn hits(&self, rows: &[f64], t: &[f64]) -> usize {
        let k = t.len();
        rows.par_chunks(k * 1024)
            .map(|block| block.chunks(k).filter(|w| w.iter().zip(t).all(|(w, t)| w < t)).count())
            .sum()
    }

    /// Point estimate only, skipping the error estimate.
    pub fn power_value(&self, n: u64) -> f64 {
        if self.exclusion.is_empty() {
            return 1.0;
        }
        self.hits(&self.draws, &self.thresholds(n)) as f64 / self.cfg.m as f64
    }

    /// Power with its Monte Carlo standard error. When the critical values
    /// carry per-batch estimates, the error is estimated by sectioning so that
    /// noise in the critical values is included; it never drops below the
    /// binomial error of the final step.
    pub fn power_at(&self, n: u64) -> MonteCarloEstimate {
        let m = self.cfg.m;
        if self.exclusion.is_empty() {
            return MonteCarloEstimate::exact(1.0, m, self.cfg.seed);
        }
        let k = self.exclusion.len();
        let mut estimate = MonteCarloEstimate::binomial(self.hits(&self.draws, &self.thresholds(n)), m, self.cfg.seed);
        let sections = &self.criticals.sections;
        if sections.len() == SECTIONS && self.criticals.mc.m == m {
            let p: Vec<f64> = (0..SECTIONS)
                .map(|b| {
                    let (lo, hi) = mcb::section_bounds(m, b);
                    let t = self.thresholds_for(&sections[b], n);
                    self.hits(&self.draws[lo * k..hi * k], &t) as f64 / (hi - lo) as f64
                })
                .collect();
            let mean = p.iter().sum::<f64>() / SECTIONS as f64;
            let var = p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (SECTIONS - 1) as f64;
            estimate.mc_se = estimate.mc_se.max((var / SECTIONS as f64).sqrt());
        }
        estimate
    }

    pub fn warnings(&self) -> Vec<Warning> {
        if self.exclusion.is_empty() {
            vec![Warning::NothingToExclude]
        } else {
            Vec::new()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerResult {
    pub n: u64,
    pub estimate: MonteCarloEstimate,
    pub criticals: CriticalValues,
    pub exclusion: Vec<usize>,
    /// Effects in outcome units (standardized inputs are converted first).
    pub effects: EffectConfig,
    pub warnings: Vec<Warning>,
}

pub fn compute_power(
    spec: &CovarianceSpec,
    effects: &EffectConfig,
    n: u64,
    alpha: f64,
    cfg: &MonteCarloConfig,
) -> Result<PowerResult> {
    check_n(n)?;
    let engine = PowerEngine::new(spec, effects, alpha, cfg)?;
    Ok(PowerResult {
        n,
        estimate: engine.power_at(n),
        criticals: engine.criticals.clone(),
        exclusion: engine.exclusion.clone(),
        effects: engine.effects.clone(),
        warnings: engine.warnings(),
    })
}

fn check_n(n: u64) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidArgument("sample size must be at least 1".into()))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerPoint {
    pub n: u64,
    pub estimate: MonteCarloEstimate,
}

/// Power over an ascending grid of sample sizes with common random numbers.
pub fn power_curve(
    spec: &CovarianceSpec,
    effects: &EffectConfig,
    n_grid: &[u64],
    alpha: f64,
    cfg: &MonteCarloConfig,
) -> Result<Vec<PowerPoint>> {
    if n_grid.is_empty() {
        return Err(Error::EmptyInput);
    }
    if n_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("sample size grid must be ascending".into()));
    }
    n_grid.iter().try_for_each(|&n| check_n(n))?;
    let engine = PowerEngine::new(spec, effects, alpha, cfg)?;
    Ok(n_grid.iter().map(|&n| PowerPoint { n, estimate: engine.power_at(n) }).collect())
}

/// Probability that the full MCB rule (with the max over all competitors)
/// excludes every target, simulated from `θ̂ ~ N(θ, Σ/n)`. The bound used by
/// [`compute_power`] never exceeds this.
pub fn max_rule_power(
    spec: &CovarianceSpec,
    effects: &EffectConfig,
    n: u64,
    criticals: &CriticalValues,
    cfg: &MonteCarloConfig,
) -> Result<MonteCarloEstimate> {
    check_n(n)?;
    cfg.validate()?;
    let effects = effects.materialize(spec)?;
    let targets = exclusion_indices(&effects);
    if targets.is_empty() {
        return Ok(MonteCarloEstimate::exact(1.0, cfg.m, cfg.seed));
    }
    let dim = spec.dim();
    let scales = mcb::diff_scales(spec)?;
    let root_n = (n as f64).sqrt();
    let theta: Vec<f64> = effects.delta.iter().map(|d| -d).collect();
    let draws = sample_unchecked(spec, cfg.m, rng::derive_seed(cfg.seed, streams::MCB_EVENT));
    let hits = draws
        .as_slice()
        .par_chunks(dim * 1024)
        .map(|block| {
            block
                .chunks(dim)
                .filter(|z| {
                    targets.iter().all(|&i| {
                        let ti = theta[i] + z[i] / root_n;
                        let c = criticals.get(i);
                        (0..dim)
                            .filter(|&j| j != i)
                            .any(|j| ti < theta[j] + z[j] / root_n - c * scales.get(i, j) / root_n)
                    })
                })
                .count()
        })
        .sum();
    Ok(MonteCarloEstimate::binomial(hits, cfg.m, cfg.seed))
}
