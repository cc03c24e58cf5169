use crate::error::{Error, Result};

/// 1-indexed rank `⌈m·p⌉`, clamped to `[1, m]`.
pub fn quantile_rank(m: usize, p: f64) -> usize {
    // guard against m·p landing a hair above an integer through rounding
    let raw = (m as f64 * p * (1.0 - 4.0 * f64::EPSILON)).ceil() as usize;
    raw.clamp(1, m)
}

/// The order statistic at rank `⌈m·p⌉` of `values`. No interpolation.
pub fn empirical_quantile(values: &[f64], p: f64) -> Result<f64> {
    let mut buf = values.to_vec();
    quantile_in_place(&mut buf, p)
}

/// As [`empirical_quantile`], reordering `values` instead of copying.
pub fn quantile_in_place(values: &mut [f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    let k = quantile_rank(values.len(), p) - 1;
    let (_, v, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_examples() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(empirical_quantile(&v, 0.5).unwrap(), 3.0);
        assert_eq!(empirical_quantile(&v, 0.95).unwrap(), 5.0);
        assert_eq!(empirical_quantile(&[5.0, 1.0, 4.0, 2.0, 3.0], 0.2).unwrap(), 1.0);
    }

    #[test]
    fn rank_is_exact_at_integers() {
        assert_eq!(quantile_rank(1_000_000, 0.95), 950_000);
        assert_eq!(quantile_rank(100, 0.8), 80);
        assert_eq!(quantile_rank(10, 0.01), 1);
    }

    #[test]
    fn errors() {
        assert_eq!(empirical_quantile(&[], 0.5), Err(Error::EmptyInput));
        assert_eq!(empirical_quantile(&[1.0], 0.0), Err(Error::ProbabilityOutOfRange(0.0)));
        assert_eq!(empirical_quantile(&[1.0], 1.0), Err(Error::ProbabilityOutOfRange(1.0)));
    }

    #[test]
    fn standard_normal_95th() {
        let z = crate::rng::standard_normals(1_000_000, 1, 4);
        let q = empirical_quantile(&z, 0.95).unwrap();
        assert!((q - 1.644_853_6).abs() < 0.01, "{q}");
    }

    proptest! {
        #[test]
        fn monotone_in_p(v in prop::collection::vec(-1e3f64..1e3, 1..200), p in 0.01f64..0.98, dp in 0.0f64..0.01) {
            let a = empirical_quantile(&v, p).unwrap();
            let b = empirical_quantile(&v, p + dp).unwrap();
            prop_assert!(a <= b);
        }
    }
}
