//! Multiple comparisons with the best: per-regime critical values and the
//! set of regimes statistically indistinguishable from the best.
//!
//! Conventions: larger θ is better. Use [`Direction::orient`] to flip
//! outcomes where lower is better before calling anything here.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvn::{quantile_in_place, sample_mvn, CovarianceSpec, MonteCarloConfig, MvnSample};
use crate::rng::streams;

/// Pair scales below this are treated as degenerate.
pub const DEGENERATE_SCALE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    HigherIsBetter,
    LowerIsBetter,
}

impl Direction {
    /// Maps estimates onto the larger-is-better scale.
    pub fn orient(self, theta: &[f64]) -> Vec<f64> {
        match self {
            Direction::HigherIsBetter => theta.to_vec(),
            Direction::LowerIsBetter => theta.iter().map(|t| -t).collect(),
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "higher" | "higher_is_better" => Ok(Direction::HigherIsBetter),
            "lower" | "lower_is_better" => Ok(Direction::LowerIsBetter),
            other => Err(Error::InvalidArgument(format!("direction must be 'higher' or 'lower', got '{other}'"))),
        }
    }
}

/// `√(Σ_ii + Σ_jj − 2Σ_ij)` for every pair: the standard deviation of
/// `√n(θ̂_i − θ̂_j)`, free of n.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffScale {
    dim: usize,
    scales: Vec<f64>,
}

impl DiffScale {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scales[i * self.dim + j]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Scale on the finite-sample level, `σ_ij = σ_ij√n / √n`.
    pub fn at_n(&self, i: usize, j: usize, n: u64) -> f64 {
        self.get(i, j) / (n as f64).sqrt()
    }
}

pub fn diff_scale(spec: &CovarianceSpec, i: usize, j: usize) -> f64 {
    (spec.get(i, i) + spec.get(j, j) - 2.0 * spec.get(i, j)).max(0.0).sqrt()
}

pub fn diff_scales(spec: &CovarianceSpec) -> Result<DiffScale> {
    let n = spec.dim();
    let mut scales = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let s = diff_scale(spec, i, j);
            if s < DEGENERATE_SCALE {
                return Err(Error::DegeneratePair { i, j, scale: s });
            }
            scales[i * n + j] = s;
        }
    }
    Ok(DiffScale { dim: n, scales })
}

/// Batches used to estimate Monte Carlo error by sectioning.
pub const SECTIONS: usize = 20;

/// Draws per batch below which sectioning is skipped.
const MIN_SECTION_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValues {
    pub alpha: f64,
    pub values: Vec<f64>,
    pub mc: MonteCarloConfig,
    /// Critical values recomputed on each of [`SECTIONS`] contiguous batches
    /// of the draws; empty when too few draws or when supplied externally.
    #[serde(default, skip_serializing)]
    pub sections: Vec<Vec<f64>>,
}

impl CriticalValues {
    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Row range of batch `b` when `m` draws are split into [`SECTIONS`] batches.
pub fn section_bounds(m: usize, b: usize) -> (usize, usize) {
    (b * m / SECTIONS, (b + 1) * m / SECTIONS)
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 0.5 {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange(alpha))
    }
}

/// Per-draw statistics `T_i = max_{j≠i} (Z_j − Z_i)/σ_ij√n`, stored column
/// by column so several α levels can share one pass over the draws.
#[derive(Debug, Clone)]
pub struct DifferenceMaxima {
    columns: Vec<Vec<f64>>,
    mc: MonteCarloConfig,
}

impl DifferenceMaxima {
    pub fn from_sample(spec: &CovarianceSpec, sample: &MvnSample) -> Result<Self> {
        let n = spec.dim();
        if sample.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: sample.dim() });
        }
        let scales = diff_scales(spec)?;
        let inv: Vec<f64> = (0..n * n)
            .map(|k| if k / n == k % n { 0.0 } else { 1.0 / scales.scales[k] })
            .collect();
        let m = sample.m();
        // row-major m × n buffer of per-draw maxima, transposed afterwards
        let mut flat = vec![0.0; m * n];
        flat.par_chunks_mut(n * 1024)
            .zip(sample.as_slice().par_chunks(n * 1024))
            .for_each(|(out, z)| {
                for (o, row) in out.chunks_mut(n).zip(z.chunks(n)) {
                    for i in 0..n {
                        let zi = row[i];
                        let mut best = f64::NEG_INFINITY;
                        for j in 0..n {
                            if j != i {
                                let t = (row[j] - zi) * inv[i * n + j];
                                if t > best {
                                    best = t;
                                }
                            }
                        }
                        o[i] = best;
                    }
                }
            });
        let columns = (0..n)
            .into_par_iter()
            .map(|i| flat.iter().skip(i).step_by(n).copied().collect())
            .collect();
        Ok(Self {
            columns,
            mc: MonteCarloConfig { m, seed: sample.seed() },
        })
    }

    pub fn critical_values(&self, alpha: f64) -> Result<CriticalValues> {
        check_alpha(alpha)?;
        let values = self
            .columns
            .par_iter()
            .map(|col| {
                let mut buf = col.clone();
                quantile_in_place(&mut buf, 1.0 - alpha)
            })
            .collect::<Result<Vec<f64>>>()?;
        let m = self.mc.m;
        let sections = if m / SECTIONS >= MIN_SECTION_DRAWS {
            (0..SECTIONS)
                .into_par_iter()
                .map(|b| {
                    let (lo, hi) = section_bounds(m, b);
                    self.columns
                        .iter()
                        .map(|col| quantile_in_place(&mut col[lo..hi].to_vec(), 1.0 - alpha))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(CriticalValues { alpha, values, mc: self.mc, sections })
    }

    /// Per-draw maxima for regime `i`.
    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }
}

/// Monte Carlo critical values: `c_i` is the empirical `(1 − α)` quantile of
/// `max_{j≠i} (Z_j − Z_i)/σ_ij√n` over `Z ~ N(0, Σ)`, so each regime is
/// retained with probability `1 − α` when all means are equal.
pub fn critical_values(spec: &CovarianceSpec, alpha: f64, cfg: &MonteCarloConfig) -> Result<CriticalValues> {
    check_alpha(alpha)?;
    diff_scales(spec)?;
    let sample = sample_mvn(spec, &cfg.derive(streams::CRITICAL))?;
    let mut cv = critical_values_from_sample(spec, alpha, &sample)?;
    cv.mc = *cfg;
    Ok(cv)
}

/// Critical values from a caller-supplied draw matrix (common random numbers).
pub fn critical_values_from_sample(spec: &CovarianceSpec, alpha: f64, sample: &MvnSample) -> Result<CriticalValues> {
    check_alpha(alpha)?;
    DifferenceMaxima::from_sample(spec, sample)?.critical_values(alpha)
}

/// Regimes retained by the MCB rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestSet {
    pub members: Vec<usize>,
    pub theta_hat: Vec<f64>,
    pub criticals: CriticalValues,
}

impl BestSet {
    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    pub fn excluded(&self) -> Vec<usize> {
        (0..self.theta_hat.len()).filter(|i| !self.contains(*i)).collect()
    }
}

/// `{i : θ̂_i ≥ max_{j≠i} [θ̂_j − c_i σ_ij]}` with `σ_ij = σ_ij√n / √n`.
/// Boundary ties are retained. The argmax of `θ̂` is always a member.
pub fn set_of_best(theta_hat: &[f64], spec: &CovarianceSpec, n: u64, criticals: &CriticalValues) -> Result<BestSet> {
    let dim = spec.dim();
    if theta_hat.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, actual: theta_hat.len() });
    }
    if criticals.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, actual: criticals.len() });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let root_n = (n as f64).sqrt();
    let best = argmax(theta_hat);
    let members = (0..dim)
        .filter(|&i| {
            if i == best {
                return true;
            }
            let c = criticals.get(i);
            let bound = (0..dim)
                .filter(|&j| j != i)
                .map(|j| theta_hat[j] - c * diff_scale(spec, i, j) / root_n)
                .fold(f64::NEG_INFINITY, f64::max);
            theta_hat[i] >= bound
        })
        .collect();
    Ok(BestSet {
        members,
        theta_hat: theta_hat.to_vec(),
        criticals: criticals.clone(),
    })
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}
