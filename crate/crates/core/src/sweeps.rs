//! Power over parameter grids: structured covariance templates, `Δ_min` and
//! uniform effect size. Grid points whose covariance is not positive definite
//! are reported as infeasible rather than failing the sweep.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcb::{critical_values, Direction};
use crate::mvn::{cholesky, io, CovarianceSpec, MonteCarloConfig};
use crate::power::{EffectConfig, MonteCarloEstimate, PowerEngine};
use crate::registry::Registry;

pub const MAX_AXES: usize = 3;

/// A covariance family indexed by named parameters.
pub trait CovarianceTemplate: Send + Sync {
    fn name(&self) -> &'static str;
    fn params(&self) -> &'static [&'static str];
    fn build(&self, p: &BTreeMap<String, f64>) -> Result<DMatrix<f64>>;
    fn dim(&self) -> usize;
}

fn param(p: &BTreeMap<String, f64>, name: &str) -> Result<f64> {
    p.get(name).copied().ok_or_else(|| Error::InvalidArgument(format!("missing template parameter '{name}'")))
}

/// `σ²` on the diagonal, `ρσ²` elsewhere.
#[derive(Debug, Clone, Copy)]
pub struct ExchangeableTemplate {
    pub dim: usize,
}

impl CovarianceTemplate for ExchangeableTemplate {
    fn name(&self) -> &'static str {
        "exchangeable"
    }

    fn params(&self) -> &'static [&'static str] {
        &["sigma2", "rho"]
    }

    fn build(&self, p: &BTreeMap<String, f64>) -> Result<DMatrix<f64>> {
        let (s2, rho) = (param(p, "sigma2")?, param(p, "rho")?);
        Ok(DMatrix::from_fn(self.dim, self.dim, |i, j| if i == j { s2 } else { rho * s2 }))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// First arm singleton, remaining arms one exchangeable block.
#[derive(Debug, Clone, Copy)]
pub struct BlockExchangeableTemplate {
    pub dim: usize,
}

impl CovarianceTemplate for BlockExchangeableTemplate {
    fn name(&self) -> &'static str {
        "block_exchangeable"
    }

    fn params(&self) -> &'static [&'static str] {
        &["sigma1w2", "sigma2w2", "rho1", "rho2"]
    }

    fn build(&self, p: &BTreeMap<String, f64>) -> Result<DMatrix<f64>> {
        let params = crate::covproject::BlockExchangeableParams {
            singleton: 0,
            sigma1w2: param(p, "sigma1w2")?,
            sigma2w2: param(p, "sigma2w2")?,
            rho1: param(p, "rho1")?,
            rho2: param(p, "rho2")?,
        };
        Ok(params.assemble(self.dim))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Two independent correlated pairs; the second pair has variances 1 and `σ²`.
#[derive(Debug, Clone, Copy)]
pub struct PairedBlocksTemplate;

impl CovarianceTemplate for PairedBlocksTemplate {
    fn name(&self) -> &'static str {
        "paired_blocks"
    }

    fn params(&self) -> &'static [&'static str] {
        &["rho1", "rho2", "sigma2"]
    }

    fn build(&self, p: &BTreeMap<String, f64>) -> Result<DMatrix<f64>> {
        let (r1, r2, s2) = (param(p, "rho1")?, param(p, "rho2")?, param(p, "sigma2")?);
        if s2 < 0.0 {
            return Err(Error::InvalidArgument(format!("sigma2 = {s2} must be non-negative")));
        }
        let c = r2 * s2.sqrt();
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(4, 4, &[
            1.0, r1, 0.0, 0.0,
            r1, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, c,
            0.0, 0.0, c, s2,
        ]);
        Ok(m)
    }

    fn dim(&self) -> usize {
        4
    }
}

/// Unit variances; the last arm correlates with arms 2 and 3 only.
#[derive(Debug, Clone, Copy)]
pub struct StarTemplate;

impl CovarianceTemplate for StarTemplate {
    fn name(&self) -> &'static str {
        "star"
    }

    fn params(&self) -> &'static [&'static str] {
        &["rho1", "rho2"]
    }

    fn build(&self, p: &BTreeMap<String, f64>) -> Result<DMatrix<f64>> {
        let (r1, r2) = (param(p, "rho1")?, param(p, "rho2")?);
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, r1,
            0.0, 0.0, 1.0, r2,
            0.0, r1, r2, 1.0,
        ]);
        Ok(m)
    }

    fn dim(&self) -> usize {
        4
    }
}

pub fn templates(dim: usize) -> Registry<dyn CovarianceTemplate> {
    let mut r: Registry<dyn CovarianceTemplate> = Registry::new("template");
    r.register("exchangeable", Box::new(ExchangeableTemplate { dim }));
    r.register("block_exchangeable", Box::new(BlockExchangeableTemplate { dim }));
    r.register("paired_blocks", Box::new(PairedBlocksTemplate));
    r.register("star", Box::new(StarTemplate));
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub param: String,
    /// Explicit grid; otherwise `steps` evenly spaced points in `[lower, upper]`.
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
    #[serde(default)]
    pub steps: Option<usize>,
}

impl Axis {
    pub fn range(param: &str, lower: f64, upper: f64, steps: usize) -> Self {
        Self { param: param.into(), values: None, lower: Some(lower), upper: Some(upper), steps: Some(steps) }
    }

    pub fn values(param: &str, values: Vec<f64>) -> Self {
        Self { param: param.into(), values: Some(values), lower: None, upper: None, steps: None }
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        let pts = match (&self.values, self.lower, self.upper, self.steps) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(lo), Some(hi), Some(steps)) => {
                if steps < 2 {
                    return Err(Error::InvalidArgument(format!("axis '{}' needs at least 2 steps", self.param)));
                }
                (0..steps).map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64).collect()
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "axis '{}' needs either values or lower/upper/steps",
                    self.param
                )))
            }
        };
        if pts.len() < 2 {
            return Err(Error::InvalidArgument(format!("axis '{}' needs at least 2 points", self.param)));
        }
        if pts.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("axis '{}' has a non-finite point", self.param)));
        }
        Ok(pts)
    }
}

/// Covariance given inline as rows or as a path to a matrix file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSource {
    Rows(Vec<Vec<f64>>),
    File(String),
}

impl SigmaSource {
    pub fn load(&self, base: Option<&Path>) -> Result<CovarianceSpec> {
        match self {
            SigmaSource::Rows(rows) => CovarianceSpec::from_rows(rows),
            SigmaSource::File(path) => {
                let p = Path::new(path);
                let p = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.to_path_buf(),
                };
                io::read_matrix(p)
            }
        }
    }
}

/// Effect inputs as written in a sweep file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectInput {
    #[serde(default)]
    pub delta: Option<Vec<f64>>,
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default)]
    pub direction: Option<Direction>,
    #[serde(default)]
    pub delta_min: Option<f64>,
    #[serde(default)]
    pub best_index: Option<usize>,
    #[serde(default)]
    pub standardized: bool,
}

impl EffectInput {
    /// Resolves to an [`EffectConfig`]; `delta_min` falls back to `default_min`.
    pub fn resolve(&self, default_min: Option<f64>) -> Result<EffectConfig> {
        let dmin = self
            .delta_min
            .or(default_min)
            .ok_or_else(|| Error::InvalidArgument("delta_min is required".into()))?;
        let e = match (&self.delta, &self.theta) {
            (Some(_), Some(_)) => return Err(Error::InvalidArgument("give either delta or theta, not both".into())),
            (Some(d), None) => match self.best_index {
                Some(b) => EffectConfig::new(d.clone(), dmin, b)?,
                None => EffectConfig::from_delta(d.clone(), dmin)?,
            },
            (None, Some(t)) => EffectConfig::from_theta(t, self.direction.unwrap_or_default(), dmin)?,
            (None, None) => return Err(Error::InvalidArgument("effects need delta or theta".into())),
        };
        Ok(if self.standardized { e.standardized() } else { e })
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_reps() -> usize {
    MonteCarloConfig::DEFAULT_REPS
}

fn default_seed() -> u64 {
    MonteCarloConfig::default().seed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SweepSpec {
    Grid {
        template: String,
        #[serde(default)]
        dim: Option<usize>,
        axes: Vec<Axis>,
        #[serde(default)]
        fixed: BTreeMap<String, f64>,
        effects: EffectInput,
        n: u64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_reps")]
        reps: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    DeltaMin {
        sigma: SigmaSource,
        effects: EffectInput,
        grid: Vec<f64>,
        n: u64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_reps")]
        reps: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    UniformDelta {
        sigma: SigmaSource,
        grid: Vec<f64>,
        best_index: usize,
        n: u64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_reps")]
        reps: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub values: Vec<f64>,
    /// `None` marks an infeasible grid point.
    pub estimate: Option<MonteCarloEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub columns: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn powers(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.estimate.as_ref().map(|e| e.value)).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.columns.clone();
        header.extend(["power", "mc_se", "feasible"].map(String::from));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.values.iter().map(|v| format!("{v:?}")).collect();
            match &r.estimate {
                Some(e) => rec.extend([format!("{:?}", e.value), format!("{:?}", e.mc_se), "true".into()]),
                None => rec.extend(["NA".into(), "NA".into(), "false".into()]),
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, pts| {
        acc.into_iter()
            .flat_map(|prefix| {
                pts.iter().map(move |&x| {
                    let mut v = prefix.clone();
                    v.push(x);
                    v
                })
            })
            .collect()
    })
}

fn feasible_spec(m: DMatrix<f64>) -> Option<CovarianceSpec> {
    let spec = CovarianceSpec::from_matrix(m).ok()?;
    cholesky(&spec).ok()?;
    Some(spec)
}

fn check_grid(grid: &[f64], what: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyInput);
    }
    if grid.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} grid must be positive")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("{what} grid must be ascending")));
    }
    Ok(())
}

fn check_n(n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    Ok(())
}

/// Power at every point of a template grid. All points share one seed, so
/// the Monte Carlo draws are common across the grid.
pub fn run_grid(
    template: &dyn CovarianceTemplate,
    axes: &[Axis],
    fixed: &BTreeMap<String, f64>,
    effects: &EffectConfig,
    n: u64,
    alpha: f64,
    cfg: &MonteCarloConfig,
) -> Result<SweepTable> {
    check_n(n)?;
    cfg.validate()?;
    crate::mcb::check_alpha(alpha)?;
    if axes.is_empty() || axes.len() > MAX_AXES {
        return Err(Error::InvalidArgument(format!("a sweep needs 1 to {MAX_AXES} axes, got {}", axes.len())));
    }
    if effects.dim() != template.dim() {
        return Err(Error::DimensionMismatch { expected: template.dim(), actual: effects.dim() });
    }
    effects.validate()?;
    let names: Vec<&str> = axes.iter().map(|a| a.param.as_str()).chain(fixed.keys().map(String::as_str)).collect();
    for name in &names {
        if !template.params().contains(name) {
            return Err(Error::InvalidArgument(format!(
                "template '{}' has no parameter '{name}' (expected {})",
                template.name(),
                template.params().join(", ")
            )));
        }
    }
    for p in template.params() {
        if names.iter().filter(|n| *n == p).count() != 1 {
            return Err(Error::InvalidArgument(format!("parameter '{p}' must be set exactly once")));
        }
    }
    let points = axes.iter().map(Axis::points).collect::<Result<Vec<_>>>()?;
    let grid = cartesian(&points);
    let rows = grid
        .into_par_iter()
        .map(|values| {
            let mut p = fixed.clone();
            for (a, v) in axes.iter().zip(&values) {
                p.insert(a.param.clone(), *v);
            }
            let estimate = match template.build(&p).ok().and_then(feasible_spec) {
                Some(spec) => Some(PowerEngine::new(&spec, effects, alpha, cfg)?.power_at(n)),
                None => None,
            };
            Ok(SweepRow { values, estimate })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { columns: axes.iter().map(|a| a.param.clone()).collect(), rows })
}

/// Power as `Δ_min` varies; the exclusion set is recomputed at every point.
pub fn sweep_delta_min(
    spec: &CovarianceSpec,
    effects: &EffectConfig,
    grid: &[f64],
    alpha: f64,
    n: u64,
    cfg: &MonteCarloConfig,
) -> Result<SweepTable> {
    check_grid(grid, "delta_min")?;
    check_n(n)?;
    cfg.validate()?;
    let criticals = critical_values(spec, alpha, cfg)?;
    let rows = grid
        .par_iter()
        .map(|&dmin| {
            let e = EffectConfig { delta_min: dmin, ..effects.clone() };
            let engine = PowerEngine::with_criticals(spec, &e, criticals.clone(), cfg)?;
            Ok(SweepRow { values: vec![dmin], estimate: Some(engine.power_at(n)) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { columns: vec!["delta_min".into()], rows })
}

/// Power when every inferior regime sits `Δ` from the best, with `Δ_min = Δ`.
pub fn sweep_uniform_delta(
    spec: &CovarianceSpec,
    grid: &[f64],
    alpha: f64,
    n: u64,
    cfg: &MonteCarloConfig,
    best_index: usize,
) -> Result<SweepTable> {
    check_grid(grid, "delta")?;
    check_n(n)?;
    cfg.validate()?;
    let criticals = critical_values(spec, alpha, cfg)?;
    let rows = grid
        .par_iter()
        .map(|&d| {
            let e = EffectConfig::uniform(spec.dim(), best_index, d)?;
            let engine = PowerEngine::with_criticals(spec, &e, criticals.clone(), cfg)?;
            Ok(SweepRow { values: vec![d], estimate: Some(engine.power_at(n)) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { columns: vec!["delta".into()], rows })
}

/// Runs a parsed sweep; relative matrix paths resolve against `base`.
pub fn run_sweep(spec: &SweepSpec, base: Option<&Path>) -> Result<SweepTable> {
    match spec {
        SweepSpec::Grid { template, dim, axes, fixed, effects, n, alpha, reps, seed } => {
            let effects = effects.resolve(None)?;
            let dim = dim.unwrap_or(effects.dim());
            let registry = templates(dim);
            let t = registry.get(template)?;
            run_grid(t, axes, fixed, &effects, *n, *alpha, &MonteCarloConfig::new(*reps, *seed)?)
        }
        SweepSpec::DeltaMin { sigma, effects, grid, n, alpha, reps, seed } => {
            let s = sigma.load(base)?;
            // the grid supplies Δ_min; any value in the file is ignored
            let e = effects.resolve(grid.first().copied())?;
            sweep_delta_min(&s, &e, grid, *alpha, *n, &MonteCarloConfig::new(*reps, *seed)?)
        }
        SweepSpec::UniformDelta { sigma, grid, best_index, n, alpha, reps, seed } => {
            let s = sigma.load(base)?;
            sweep_uniform_delta(&s, grid, *alpha, *n, &MonteCarloConfig::new(*reps, *seed)?, *best_index)
        }
    }
}
