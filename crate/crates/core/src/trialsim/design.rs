use nalgebra::DMatrix;
use serde::Serialize;

use super::record::TrialRecord;
use crate::registry::Registry;

/// An embedded regime: first-stage option and, for re-randomized
/// individuals, the second-stage option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Edtr {
    pub a1: i8,
    pub a2: Option<i8>,
}

/// Marginal structural model: `θ = Dβ`, and the regressor of regime `k`
/// is row `k` of `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct MsmSpec {
    pub design_id: u8,
    pub contrast: DMatrix<f64>,
}

impl MsmSpec {
    pub fn regimes(&self) -> usize {
        self.contrast.nrows()
    }

    pub fn coefficients(&self) -> usize {
        self.contrast.ncols()
    }

    pub fn theta(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.regimes())
            .map(|k| (0..self.coefficients()).map(|j| self.contrast[(k, j)] * beta[j]).sum())
            .collect()
    }
}

/// `E[O21 | O21 ≤ 0]` with `O21 ~ N(0, 1.25)` marginally.
pub fn nonresponder_o21_mean() -> f64 {
    -(2.5 / std::f64::consts::PI).sqrt()
}

/// A two-stage SMART with response (`O21 > 0`) as the tailoring variable.
///
/// Both designs share the covariate and first-stage scheme; they differ in who
/// is re-randomized, the second-stage options and the outcome mean.
pub trait SmartDesign: Send + Sync {
    fn id(&self) -> u8;
    fn default_delta(&self) -> f64;
    fn edtrs(&self) -> Vec<Edtr>;
    fn msm(&self) -> MsmSpec;
    fn second_stage_options(&self) -> &'static [i8];
    fn rerandomized(&self, a1: i8, responder: bool) -> bool;
    /// Outcome mean given covariates and treatments.
    fn mean_outcome(&self, r: &TrialRecord, a1: i8, a2: Option<i8>, delta: f64) -> f64;
    /// Regressors of the second-stage conditional mean model at the given
    /// treatments.
    fn outcome_regressors(&self, r: &TrialRecord, a1: i8, a2: Option<i8>) -> Vec<f64>;
    /// The second-stage model with its treatment terms gated on response.
    /// Responders are never re-randomized, so those terms are identically
    /// zero and only the baseline, intermediate and first-stage columns remain.
    fn response_gated_regressors(&self, r: &TrialRecord, a1: i8) -> Vec<f64> {
        let mut x = self.outcome_regressors(r, a1, None);
        x.truncate(7);
        x
    }
    fn true_theta(&self, delta: f64) -> Vec<f64>;
    /// Regressors of the first-stage conditional mean model.
    fn baseline_regressors(&self, r: &TrialRecord, a1: i8) -> Vec<f64>;

    fn p_first(&self) -> f64 {
        0.5
    }

    fn p_second(&self, a1: i8, responder: bool) -> f64 {
        if self.rerandomized(a1, responder) {
            1.0 / self.second_stage_options().len() as f64
        } else {
            1.0
        }
    }

    fn consistent(&self, r: &TrialRecord, e: &Edtr) -> bool {
        r.a1 == e.a1 && (!self.rerandomized(r.a1, r.responder) || r.a2 == e.a2)
    }

    /// Second-stage treatment regime `e` assigns to this individual.
    fn assigned_a2(&self, r: &TrialRecord, e: &Edtr) -> Option<i8> {
        if self.rerandomized(e.a1, r.responder) {
            e.a2
        } else {
            None
        }
    }

    fn w1(&self, r: &TrialRecord, e: &Edtr) -> f64 {
        if r.a1 == e.a1 {
            1.0 / self.p_first()
        } else {
            0.0
        }
    }

    fn w2(&self, r: &TrialRecord, e: &Edtr) -> f64 {
        if self.consistent(r, e) {
            1.0 / (self.p_first() * self.p_second(r.a1, r.responder))
        } else {
            0.0
        }
    }
}

/// Responders continue; non-responders in either arm are re-randomized ±1.
#[derive(Debug, Clone, Copy, Default)]
pub struct Design1;

impl SmartDesign for Design1 {
    fn id(&self) -> u8 {
        1
    }

    fn default_delta(&self) -> f64 {
        0.25
    }

    fn edtrs(&self) -> Vec<Edtr> {
        [(1, 1), (-1, 1), (1, -1), (-1, -1)].iter().map(|&(a1, a2)| Edtr { a1, a2: Some(a2) }).collect()
    }

    fn msm(&self) -> MsmSpec {
        #[rustfmt::skip]
        let d = DMatrix::from_row_slice(4, 3, &[
            1.0, 1.0, 1.0,
            1.0, -1.0, 1.0,
            1.0, 1.0, -1.0,
            1.0, -1.0, -1.0,
        ]);
        MsmSpec { design_id: 1, contrast: d }
    }

    fn second_stage_options(&self) -> &'static [i8] {
        &[-1, 1]
    }

    fn rerandomized(&self, _a1: i8, responder: bool) -> bool {
        !responder
    }

    fn mean_outcome(&self, r: &TrialRecord, a1: i8, a2: Option<i8>, delta: f64) -> f64 {
        let a1 = a1 as f64;
        let second = if self.rerandomized(r.a1, r.responder) { a2.unwrap_or(0) as f64 * delta / 2.0 } else { 0.0 };
        1.0 + r.o11 - r.o12 + r.o22 + r.o21 + a1 * (delta + r.o11 / 2.0) + second
    }

    fn outcome_regressors(&self, r: &TrialRecord, a1: i8, a2: Option<i8>) -> Vec<f64> {
        let a1 = a1 as f64;
        let nr_a2 = if r.responder { 0.0 } else { a2.unwrap_or(0) as f64 };
        vec![1.0, r.o11, r.o12, r.o21, r.o22, a1, a1 * r.o11, nr_a2]
    }

    fn baseline_regressors(&self, r: &TrialRecord, a1: i8) -> Vec<f64> {
        let a1 = a1 as f64;
        vec![1.0, r.o11, r.o12, a1, a1 * r.o11]
    }

    fn true_theta(&self, delta: f64) -> Vec<f64> {
        self.edtrs()
            .iter()
            .map(|e| 1.0 + e.a1 as f64 * delta + 0.5 * e.a2.unwrap_or(0) as f64 * delta / 2.0)
            .collect()
    }
}

/// Only non-responders to `a1 = −1` are re-randomized, among four options.
#[derive(Debug, Clone, Copy, Default)]
pub struct Design2;

impl Design2 {
    fn condition_b(a1: i8, responder: bool) -> bool {
        a1 == -1 && !responder
    }
}

impl SmartDesign for Design2 {
    fn id(&self) -> u8 {
        2
    }

    fn default_delta(&self) -> f64 {
        2.0
    }

    fn edtrs(&self) -> Vec<Edtr> {
        // option 4 is the reference level of the model
        let mut v = vec![Edtr { a1: 1, a2: None }];
        v.extend([4, 1, 2, 3].iter().map(|&a2| Edtr { a1: -1, a2: Some(a2) }));
        v
    }

    fn msm(&self) -> MsmSpec {
        #[rustfmt::skip]
        let d = DMatrix::from_row_slice(5, 5, &[
            1.0, 0.0, 0.0, 0.0, 0.0,
            1.0, 1.0, 0.0, 0.0, 0.0,
            1.0, 1.0, 1.0, 0.0, 0.0,
            1.0, 1.0, 0.0, 1.0, 0.0,
            1.0, 1.0, 0.0, 0.0, 1.0,
        ]);
        MsmSpec { design_id: 2, contrast: d }
    }

    fn second_stage_options(&self) -> &'static [i8] {
        &[1, 2, 3, 4]
    }

    fn rerandomized(&self, a1: i8, responder: bool) -> bool {
        Self::condition_b(a1, responder)
    }

    fn mean_outcome(&self, r: &TrialRecord, a1: i8, a2: Option<i8>, delta: f64) -> f64 {
        let arm = if a1 == -1 { delta + r.o11 } else { 0.0 };
        let second = if Self::condition_b(a1, r.responder) {
            match a2 {
                Some(1) => -delta / 4.0,
                Some(2) => delta / 2.0 + delta / 2.0 * (r.o21 - nonresponder_o21_mean()),
                _ => 0.0,
            }
        } else {
            0.0
        };
        1.0 + r.o11 - r.o12 + r.o21 + r.o22 + arm + second
    }

    fn outcome_regressors(&self, r: &TrialRecord, a1: i8, a2: Option<i8>) -> Vec<f64> {
        let arm = if a1 == -1 { 1.0 } else { 0.0 };
        let b = if Self::condition_b(a1, r.responder) { 1.0 } else { 0.0 };
        let is = |k: i8| if a2 == Some(k) { b } else { 0.0 };
        vec![1.0, r.o11, r.o12, r.o21, r.o22, arm, arm * r.o11, is(1), is(2), is(3), is(2) * r.o21]
    }

    fn baseline_regressors(&self, r: &TrialRecord, a1: i8) -> Vec<f64> {
        let arm = if a1 == -1 { 1.0 } else { 0.0 };
        vec![1.0, r.o11, r.o12, arm, arm * r.o11]
    }

    fn true_theta(&self, delta: f64) -> Vec<f64> {
        let beta = [1.0, delta, -delta / 8.0, delta / 4.0, 0.0];
        self.msm().theta(&beta)
    }
}

pub fn designs() -> Registry<dyn SmartDesign> {
    let mut r: Registry<dyn SmartDesign> = Registry::new("design");
    r.register("1", Box::new(Design1));
    r.register("2", Box::new(Design2));
    r
}
