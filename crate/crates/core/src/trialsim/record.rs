use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::design::{Design1, Design2, SmartDesign};
use crate::error::Result;
use crate::rng;

/// One participant: baseline covariates, first-stage option, intermediate
/// outcomes, response, optional second-stage option and final outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialRecord {
    pub o11: f64,
    pub o12: f64,
    pub a1: i8,
    pub o21: f64,
    pub o22: f64,
    pub responder: bool,
    pub a2: Option<i8>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub design_id: u8,
    pub delta: f64,
    pub seed: u64,
    pub records: Vec<TrialRecord>,
}

impl TrialDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with one row per participant; `NA` marks a missing second stage.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["o11", "o12", "a1", "o21", "o22", "responder", "a2", "y"])?;
        for r in &self.records {
            w.write_record([
                r.o11.to_string(),
                r.o12.to_string(),
                r.a1.to_string(),
                r.o21.to_string(),
                r.o22.to_string(),
                u8::from(r.responder).to_string(),
                r.a2.map_or_else(|| "NA".to_string(), |a| a.to_string()),
                r.y.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn generate(design: &dyn SmartDesign, n: usize, delta: f64, seed: u64) -> TrialDataset {
    let mut g = rng::generator(seed);
    let options = design.second_stage_options();
    let records = (0..n)
        .map(|_| {
            let o11: f64 = g.sample(StandardNormal);
            let o12: f64 = g.sample(StandardNormal);
            let a1: i8 = if g.gen_bool(0.5) { 1 } else { -1 };
            let o21 = 0.5 * o11 + g.sample::<f64, _>(StandardNormal);
            let o22 = 0.5 * o12 + g.sample::<f64, _>(StandardNormal);
            let responder = o21 > 0.0;
            let a2 = design.rerandomized(a1, responder).then(|| options[g.gen_range(0..options.len())]);
            let mut r = TrialRecord { o11, o12, a1, o21, o22, responder, a2, y: 0.0 };
            r.y = design.mean_outcome(&r, a1, a2, delta) + g.sample::<f64, _>(StandardNormal);
            r
        })
        .collect();
    TrialDataset { design_id: design.id(), delta, seed, records }
}

pub fn generate_design1(n: usize, delta: f64, seed: u64) -> TrialDataset {
    generate(&Design1, n, delta, seed)
}

pub fn generate_design2(n: usize, delta: f64, seed: u64) -> TrialDataset {
    generate(&Design2, n, delta, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regime_means(design: &dyn SmartDesign, data: &TrialDataset) -> Vec<f64> {
        // Horvitz-Thompson mean per regime
        let n = data.len() as f64;
        design
            .edtrs()
            .iter()
            .map(|e| data.records.iter().map(|r| design.w2(r, e) * r.y).sum::<f64>() / n)
            .collect()
    }

    #[test]
    fn deterministic() {
        let a = generate_design1(500, 0.25, 9);
        assert_eq!(a, generate_design1(500, 0.25, 9));
        assert_eq!(a.to_csv().unwrap(), generate_design1(500, 0.25, 9).to_csv().unwrap());
        assert_ne!(a, generate_design1(500, 0.25, 10));
    }

    #[test]
    fn rerandomization_rule() {
        let d = generate_design1(2000, 0.25, 1);
        assert!(d.records.iter().all(|r| r.a2.is_some() == !r.responder));
        let d = generate_design2(2000, 2.0, 1);
        assert!(d.records.iter().all(|r| r.a2.is_some() == (!r.responder && r.a1 == -1)));
        assert!(d.records.iter().filter_map(|r| r.a2).all(|a| (1..=4).contains(&a)));
    }

    #[test]
    fn csv_marks_missing_second_stage() {
        let d = generate_design2(50, 2.0, 4);
        let text = d.to_csv().unwrap();
        assert!(text.starts_with("o11,o12,a1,o21,o22,responder,a2,y\n"));
        assert_eq!(text.lines().count(), 51);
        assert!(text.contains(",NA,"));
    }

    #[test]
    fn design1_regime_means() {
        let data = generate_design1(4_000_000, 0.25, 11);
        let got = regime_means(&Design1, &data);
        for (g, t) in got.iter().zip([1.312, 0.812, 1.188, 0.688]) {
            assert!((g - t).abs() < 0.01, "{got:?}");
        }
        let flat = regime_means(&Design1, &generate_design1(4_000_000, 0.0, 12));
        for g in &flat {
            assert!((g - flat[0]).abs() < 0.02, "{flat:?}");
        }
    }

    #[test]
    fn design2_regime_means() {
        let data = generate_design2(4_000_000, 2.0, 13);
        let got = regime_means(&Design2, &data);
        for (g, t) in got.iter().zip([1.0, 3.0, 2.75, 3.5, 3.0]) {
            assert!((g - t).abs() < 0.02, "{got:?}");
        }
        let flat = regime_means(&Design2, &generate_design2(4_000_000, 0.0, 14));
        for g in &flat[2..] {
            assert!((g - flat[1]).abs() < 0.03, "{flat:?}");
        }
    }
}
