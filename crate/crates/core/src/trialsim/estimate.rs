//! Weighted and augmented estimating equations for the marginal structural
//! model, with plug-in sandwich variance for `√n θ̂`.
//!
//! Both estimators reduce to the linear system
//! `Σ_i Σ_k h_ik D_k (Ỹ_ik − D_kᵗβ) = 0`: IPW uses `h = w2`, `Ỹ = Y`;
//! AIPW uses `h = 1` and the pseudo-outcome
//! `Ỹ = w2·Y − (w2 − w1)·μ2 − (w1 − 1)·μ1`.

use nalgebra::{DMatrix, DVector};

use super::design::{Edtr, SmartDesign};
use super::record::{TrialDataset, TrialRecord};
use crate::error::{Error, Result};
use crate::mvn::CovarianceSpec;
use crate::registry::Registry;

/// Per-participant, per-regime weights and targets of the linear equation.
#[derive(Debug, Clone)]
pub struct Stack {
    pub n: usize,
    pub regimes: usize,
    /// `h_ik`, row-major by participant.
    pub weight: Vec<f64>,
    /// `Ỹ_ik`, row-major by participant.
    pub target: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub method: &'static str,
    pub beta_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    /// Sandwich estimate of `Var(√n θ̂)`.
    pub sigma_hat: DMatrix<f64>,
    pub n: usize,
    /// Whether the sandwich inverts the weighted Jacobian of the equation.
    pub weighted_jacobian: bool,
}

impl EstimationResult {
    pub fn sigma_spec(&self) -> Result<CovarianceSpec> {
        CovarianceSpec::from_matrix(self.sigma_hat.clone())
    }

    /// Standard errors of `θ̂`.
    pub fn theta_se(&self) -> Vec<f64> {
        (0..self.theta_hat.len()).map(|k| (self.sigma_hat[(k, k)].max(0.0) / self.n as f64).sqrt()).collect()
    }
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let scale = a.diagonal().amax();
    let chol = a.clone().cholesky().ok_or_else(|| Error::SingularSystem(what.to_string()))?;
    let l = chol.l();
    let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x * x));
    if !(scale > 0.0) || min_pivot < 1e-12 * scale {
        return Err(Error::SingularSystem(what.to_string()));
    }
    Ok(chol.solve(b))
}

/// Least squares fit of `y` on the rows of `x`.
pub(crate) fn least_squares(x: &[Vec<f64>], y: &[f64], what: &str) -> Result<DVector<f64>> {
    let p = x.first().map_or(0, Vec::len);
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for (row, &yi) in x.iter().zip(y) {
        for a in 0..p {
            xty[a] += row[a] * yi;
            for b in 0..=a {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    solve_spd(&xtx, &xty, what)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the stacked equation and forms the sandwich variance.
pub fn solve_stack(stack: &Stack, contrast: &DMatrix<f64>, method: &'static str, weighted_jacobian: bool) -> Result<EstimationResult> {
    let (k_n, p) = contrast.shape();
    if k_n != stack.regimes {
        return Err(Error::DimensionMismatch { expected: stack.regimes, actual: k_n });
    }
    let n = stack.n;
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let rows: Vec<DVector<f64>> = (0..k_n).map(|k| contrast.row(k).transpose()).collect();
    let outer: Vec<DMatrix<f64>> = rows.iter().map(|d| d * d.transpose()).collect();
    let mut bread = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for i in 0..n {
        for k in 0..k_n {
            let h = stack.weight[i * k_n + k];
            if h != 0.0 {
                bread += &outer[k] * h;
                rhs += &rows[k] * (h * stack.target[i * k_n + k]);
            }
        }
    }
    let beta = solve_spd(&bread, &rhs, "estimating equation")?;
    let fitted: Vec<f64> = rows.iter().map(|d| d.dot(&beta)).collect();

    let mut meat = DMatrix::zeros(p, p);
    let mut u = DVector::zeros(p);
    for i in 0..n {
        u.fill(0.0);
        for k in 0..k_n {
            let h = stack.weight[i * k_n + k];
            if h != 0.0 {
                u += &rows[k] * (h * (stack.target[i * k_n + k] - fitted[k]));
            }
        }
        meat += &u * u.transpose();
    }
    let nf = n as f64;
    meat /= nf;
    // Γ = −bread/n; the sign cancels in the sandwich
    let gamma = &bread / nf;
    let gamma_inv = gamma.clone().try_inverse().ok_or(Error::SingularGamma)?;
    let mut inner = &gamma_inv * &meat * gamma_inv.transpose();
    inner = (&inner + inner.transpose()) * 0.5;
    let mut sigma = contrast * inner * contrast.transpose();
    sigma = (&sigma + sigma.transpose()) * 0.5;
    let beta_hat: Vec<f64> = beta.iter().copied().collect();
    let theta_hat = fitted;
    Ok(EstimationResult { method, beta_hat, theta_hat, sigma_hat: sigma, n, weighted_jacobian })
}

/// A regime-mean estimator.
pub trait Estimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn stack(&self, design: &dyn SmartDesign, data: &TrialDataset) -> Result<Stack>;
    fn weighted_jacobian(&self) -> bool;

    fn fit(&self, design: &dyn SmartDesign, data: &TrialDataset) -> Result<EstimationResult> {
        let stack = self.stack(design, data)?;
        solve_stack(&stack, &design.msm().contrast, self.name(), self.weighted_jacobian())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Ipw;

impl Estimator for Ipw {
    fn name(&self) -> &'static str {
        "ipw"
    }

    fn weighted_jacobian(&self) -> bool {
        true
    }

    fn stack(&self, design: &dyn SmartDesign, data: &TrialDataset) -> Result<Stack> {
        let edtrs = design.edtrs();
        let mut weight = Vec::with_capacity(data.len() * edtrs.len());
        let mut target = Vec::with_capacity(data.len() * edtrs.len());
        for r in &data.records {
            for e in &edtrs {
                weight.push(design.w2(r, e));
                target.push(r.y);
            }
        }
        Ok(Stack { n: data.len(), regimes: edtrs.len(), weight, target })
    }
}

/// How the conditional means of the augmentation terms are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Augmentation {
    /// The published working models: second-stage terms gated on response
    /// (which vanish, as responders are never re-randomized) and a pooled
    /// first-stage regression of `Y` on baseline covariates and `a1`.
    #[default]
    Displayed,
    /// Second-stage model with the re-randomized group's treatment terms, and
    /// a regime-specific first-stage model fitted to `μ2` within each arm.
    Full,
    /// Deliberately wrong model: intercept and `o11` only.
    Misspecified,
}

impl std::str::FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "displayed" => Ok(Self::Displayed),
            "full" => Ok(Self::Full),
            "misspecified" => Ok(Self::Misspecified),
            other => Err(Error::Parse(format!("unknown augmentation '{other}' (displayed, full, misspecified)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Aipw {
    pub augmentation: Augmentation,
}

/// Conditional means `μ2_ik` and `μ1_ik`, row-major by participant.
#[derive(Debug, Clone)]
pub struct ConditionalMeans {
    pub second: Vec<f64>,
    pub first: Vec<f64>,
}

impl Aipw {
    pub fn full() -> Self {
        Self { augmentation: Augmentation::Full }
    }

    fn regressors(&self, design: &dyn SmartDesign, r: &TrialRecord, a1: i8, a2: Option<i8>) -> Vec<f64> {
        match self.augmentation {
            Augmentation::Displayed => design.response_gated_regressors(r, a1),
            Augmentation::Full => design.outcome_regressors(r, a1, a2),
            Augmentation::Misspecified => vec![1.0, r.o11],
        }
    }

    pub fn conditional_means(&self, design: &dyn SmartDesign, data: &TrialDataset) -> Result<ConditionalMeans> {
        let edtrs = design.edtrs();
        let k_n = edtrs.len();
        let x: Vec<Vec<f64>> = data.records.iter().map(|r| self.regressors(design, r, r.a1, r.a2)).collect();
        let y: Vec<f64> = data.records.iter().map(|r| r.y).collect();
        let gamma = least_squares(&x, &y, "second-stage conditional mean")?;
        let gamma = gamma.as_slice();
        let mut second = vec![0.0; data.len() * k_n];
        for (i, r) in data.records.iter().enumerate() {
            for (k, e) in edtrs.iter().enumerate() {
                second[i * k_n + k] = dot(&self.regressors(design, r, e.a1, design.assigned_a2(r, e)), gamma);
            }
        }
        let mut first = vec![0.0; data.len() * k_n];
        if self.augmentation == Augmentation::Displayed {
            let x: Vec<Vec<f64>> = data.records.iter().map(|r| design.baseline_regressors(r, r.a1)).collect();
            let g = least_squares(&x, &y, "first-stage conditional mean")?;
            for (i, r) in data.records.iter().enumerate() {
                for (k, e) in edtrs.iter().enumerate() {
                    first[i * k_n + k] = dot(&design.baseline_regressors(r, e.a1), g.as_slice());
                }
            }
            return Ok(ConditionalMeans { second, first });
        }
        // regress μ2 for each regime on baseline covariates within the
        // matching first-stage arm
        for (k, e) in edtrs.iter().enumerate() {
            let (xs, ys): (Vec<Vec<f64>>, Vec<f64>) = data
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.a1 == e.a1)
                .map(|(i, r)| (vec![1.0, r.o11, r.o12], second[i * k_n + k]))
                .unzip();
            let g = least_squares(&xs, &ys, "first-stage conditional mean")?;
            for (i, r) in data.records.iter().enumerate() {
                first[i * k_n + k] = g[0] + g[1] * r.o11 + g[2] * r.o12;
            }
        }
        Ok(ConditionalMeans { second, first })
    }

    pub fn stack_with(&self, design: &dyn SmartDesign, data: &TrialDataset, means: &ConditionalMeans) -> Stack {
        let edtrs: Vec<Edtr> = design.edtrs();
        let k_n = edtrs.len();
        let mut target = Vec::with_capacity(data.len() * k_n);
        for (i, r) in data.records.iter().enumerate() {
            for (k, e) in edtrs.iter().enumerate() {
                let (w1, w2) = (design.w1(r, e), design.w2(r, e));
                let idx = i * k_n + k;
                target.push(w2 * r.y - (w2 - w1) * means.second[idx] - (w1 - 1.0) * means.first[idx]);
            }
        }
        Stack { n: data.len(), regimes: k_n, weight: vec![1.0; data.len() * k_n], target }
    }
}

impl Estimator for Aipw {
    fn name(&self) -> &'static str {
        "aipw"
    }

    fn weighted_jacobian(&self) -> bool {
        false
    }

    fn stack(&self, design: &dyn SmartDesign, data: &TrialDataset) -> Result<Stack> {
        let means = self.conditional_means(design, data)?;
        Ok(self.stack_with(design, data, &means))
    }
}

/// Per-participant estimating function `U_i(β)` of a stack.
pub fn estimating_function(stack: &Stack, contrast: &DMatrix<f64>, beta: &[f64]) -> Vec<Vec<f64>> {
    let k_n = stack.regimes;
    let p = contrast.ncols();
    let fitted: Vec<f64> = (0..k_n).map(|k| (0..p).map(|j| contrast[(k, j)] * beta[j]).sum()).collect();
    (0..stack.n)
        .map(|i| {
            let mut u = vec![0.0; p];
            for k in 0..k_n {
                let h = stack.weight[i * k_n + k];
                let resid = stack.target[i * k_n + k] - fitted[k];
                for j in 0..p {
                    u[j] += contrast[(k, j)] * h * resid;
                }
            }
            u
        })
        .collect()
}

pub fn fit_ipw(design: &dyn SmartDesign, data: &TrialDataset) -> Result<EstimationResult> {
    Ipw.fit(design, data)
}

pub fn fit_aipw(design: &dyn SmartDesign, data: &TrialDataset) -> Result<EstimationResult> {
    Aipw::default().fit(design, data)
}

/// Sandwich variance of `√n θ̂` as a covariance.
pub fn sandwich_variance(result: &EstimationResult) -> Result<CovarianceSpec> {
    result.sigma_spec()
}

pub fn estimators() -> Registry<dyn Estimator> {
    let mut r: Registry<dyn Estimator> = Registry::new("method");
    r.register("ipw", Box::new(Ipw));
    r.register("aipw", Box::new(Aipw::default()));
    r.register("aipw-full", Box::new(Aipw::full()));
    r
}
