//! Minimum sample size for a target power.
//!
//! Rewriting the power event as `∩_i {X_i < √n}` with
//! `X_i = σ_iN√n (W_i + c_i) / Δ_i` gives a distribution free of `n`, so the
//! smallest adequate `n` is `⌈(c*)²⌉` where `c*` is the `(1 − β)` quantile of
//! `max_i X_i` (the equicoordinate quantile).

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mcb::CriticalValues;
use crate::mvn::{quantile_in_place, CovarianceSpec, MonteCarloConfig};
use crate::power::{
    contrast_covariance, exclusion_indices, scales_to_best, EffectConfig, MonteCarloEstimate, PowerEngine, Warning,
};
use crate::registry::Registry;

pub fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 0.5 {
        Ok(())
    } else {
        Err(Error::BetaOutOfRange(beta))
    }
}

/// Mean vector and covariance of `X` over the exclusion set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizingDistribution {
    pub indices: Vec<usize>,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

pub fn sizing_distribution(
    spec: &CovarianceSpec,
    effects: &EffectConfig,
    criticals: &CriticalValues,
) -> Result<SizingDistribution> {
    let effects = effects.materialize(spec)?;
    let idx = exclusion_indices(&effects);
    if idx.is_empty() {
        return Err(Error::EmptyExclusionSet);
    }
    if let Some(&i) = idx.iter().find(|&&i| effects.delta[i] <= 0.0) {
        return Err(Error::ZeroEffect(i));
    }
    let b = effects.best_index;
    let scales = scales_to_best(spec, b, &idx)?;
    let mean = idx
        .iter()
        .zip(&scales)
        .map(|(&i, s)| criticals.get(i) * s / effects.delta[i])
        .collect();
    let raw: DMatrix<f64> = contrast_covariance(spec, b, &idx);
    let cov = (0..idx.len())
        .map(|r| {
            (0..idx.len())
                .map(|c| raw[(r, c)] / (effects.delta[idx[r]] * effects.delta[idx[c]]))
                .collect()
        })
        .collect();
    Ok(SizingDistribution { indices: idx, mean, cov })
}

#[derive(Debug, Clone, Serialize)]
pub struct SizingResult {
    pub n: u64,
    /// Equicoordinate quantile; absent for search-based sizing.
    pub c_star: Option<f64>,
    pub verified_power: MonteCarloEstimate,
    pub mc: MonteCarloConfig,
    pub method: String,
    pub criticals: CriticalValues,
    pub exclusion: Vec<usize>,
    pub effects: EffectConfig,
    pub warnings: Vec<Warning>,
}

/// Inputs shared by every sizing strategy.
#[derive(Debug, Clone)]
pub struct SizingProblem<'a> {
    pub spec: &'a CovarianceSpec,
    pub effects: &'a EffectConfig,
    pub alpha: f64,
    pub beta: f64,
    pub mc: MonteCarloConfig,
}

/// A sample size strategy.
pub trait SampleSizer: Send + Sync {
    fn name(&self) -> &'static str;
    fn size(&self, problem: &SizingProblem<'_>) -> Result<SizingResult>;
}

fn engine_for(problem: &SizingProblem<'_>, mc: &MonteCarloConfig) -> Result<PowerEngine> {
    check_beta(problem.beta)?;
    let engine = PowerEngine::new(problem.spec, problem.effects, problem.alpha, mc)?;
    if engine.exclusion().is_empty() {
        return Err(Error::EmptyExclusionSet);
    }
    Ok(engine)
}

/// Quantile-based sizing.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuantileSizer;

impl QuantileSizer {
    fn run(problem: &SizingProblem<'_>, mc: &MonteCarloConfig) -> Result<SizingResult> {
        let engine = engine_for(problem, mc)?;
        let effects = engine.effects();
        let idx = engine.exclusion();
        let k = idx.len();
        // X is drawn as an affine image of the power draws so the quantile and
        // the verification below share common random numbers.
        let coef: Vec<(f64, f64)> = idx
            .iter()
            .zip(engine.scales())
            .map(|(&i, s)| (s / effects.delta[i], engine.criticals().get(i)))
            .collect();
        let mut maxima: Vec<f64> = engine
            .draws()
            .chunks(k)
            .map(|w| {
                w.iter()
                    .zip(&coef)
                    .map(|(w, (a, c))| a * (w + c))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let c_star = quantile_in_place(&mut maxima, 1.0 - problem.beta)?;
        let mut warnings = Vec::new();
        let n = if c_star <= 0.0 {
            warnings.push(Warning::AlreadyPowered);
            1
        } else {
            ((c_star * c_star).ceil() as u64).max(1)
        };
        Ok(SizingResult {
            n,
            c_star: Some(c_star),
            verified_power: engine.power_at(n),
            mc: *mc,
            method: "quantile".into(),
            criticals: engine.criticals().clone(),
            exclusion: idx.to_vec(),
            effects: effects.clone(),
            warnings,
        })
    }
}

fn verified(result: &SizingResult, beta: f64) -> bool {
    let p = &result.verified_power;
    p.value >= 1.0 - beta - 3.0 * p.mc_se
}

impl SampleSizer for QuantileSizer {
    fn name(&self) -> &'static str {
        "quantile"
    }

    fn size(&self, problem: &SizingProblem<'_>) -> Result<SizingResult> {
        let first = Self::run(problem, &problem.mc)?;
        if verified(&first, problem.beta) {
            return Ok(first);
        }
        let doubled = problem.mc.with_reps(problem.mc.m * 2);
        let mut second = Self::run(problem, &doubled)?;
        second.warnings.push(Warning::RepetitionsDoubled);
        if verified(&second, problem.beta) {
            Ok(second)
        } else {
            Err(Error::VerificationFailed { power: second.verified_power.value, target: 1.0 - problem.beta })
        }
    }
}

/// Integer bisection on the power curve, which is exactly monotone in `n`
/// under common random numbers.
#[derive(Debug, Clone, Copy)]
pub struct BisectionSizer {
    pub n_max: u64,
}

impl Default for BisectionSizer {
    fn default() -> Self {
        Self { n_max: 1_000_000 }
    }
}

impl SampleSizer for BisectionSizer {
    fn name(&self) -> &'static str {
        "bisection"
    }

    fn size(&self, problem: &SizingProblem<'_>) -> Result<SizingResult> {
        if self.n_max == 0 {
            return Err(Error::InvalidArgument("n_max must be at least 1".into()));
        }
        let engine = engine_for(problem, &problem.mc)?;
        let target = 1.0 - problem.beta;
        let reached = |n: u64| engine.power_value(n) >= target;
        if !reached(self.n_max) {
            return Err(Error::NotReachedWithin(self.n_max));
        }
        let (mut lo, mut hi) = (0u64, self.n_max);
        // invariant: power(lo) < target (or lo = 0), power(hi) ≥ target
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if reached(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut warnings = Vec::new();
        if hi == 1 {
            warnings.push(Warning::AlreadyPowered);
        }
        Ok(SizingResult {
            n: hi,
            c_star: None,
            verified_power: engine.power_at(hi),
            mc: problem.mc,
            method: "bisection".into(),
            criticals: engine.criticals().clone(),
            exclusion: engine.exclusion().to_vec(),
            effects: engine.effects().clone(),
            warnings,
        })
    }
}

pub fn sample_size(
    spec: &CovarianceSpec,
    effects: &EffectConfig,
    alpha: f64,
    beta: f64,
    cfg: &MonteCarloConfig,
) -> Result<SizingResult> {
    QuantileSizer.size(&SizingProblem { spec, effects, alpha, beta, mc: *cfg })
}

pub fn sample_size_bisection(
    spec: &CovarianceSpec,
    effects: &EffectConfig,
    alpha: f64,
    beta: f64,
    cfg: &MonteCarloConfig,
    n_max: u64,
) -> Result<SizingResult> {
    BisectionSizer { n_max }.size(&SizingProblem { spec, effects, alpha, beta, mc: *cfg })
}

/// Registered sizing strategies, selectable by name.
pub fn sizers() -> Registry<dyn SampleSizer> {
    let mut r: Registry<dyn SampleSizer> = Registry::new("sizing method");
    r.register("quantile", Box::new(QuantileSizer));
    r.register("bisection", Box::new(BisectionSizer::default()));
    r
}
