use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::factor::SqrtFactor;
use crate::error::{Error, Result};

/// Relative tolerance for symmetry, scaled by the largest absolute entry.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Relative tolerance below which a pivot of the rank-revealing
/// factorization counts as zero, scaled by the largest diagonal entry.
/// Matrices printed to two decimals carry Schur remainders of a few 1e-4
/// relative to the diagonal, so this is looser than round-off alone needs.
pub const SEMIDEFINITE_TOL: f64 = 1e-3;

/// Asymptotic covariance of `√n·θ̂` over the embedded regimes.
///
/// Holds a symmetric matrix that passed validation together with its
/// rank-revealing square-root factor. Published estimates are often rank
/// deficient (more regimes than model parameters) and rounded, so matrices
/// that are positive semidefinite up to [`SEMIDEFINITE_TOL`] are accepted;
/// anything clearly indefinite is rejected.
#[derive(Debug, Clone)]
pub struct CovarianceSpec {
    matrix: DMatrix<f64>,
    factor: SqrtFactor,
}

impl CovarianceSpec {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        validate_covariance(rows)
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::NotSquare { rows: n, row: 0, cols: matrix.ncols() });
        }
        if n < 2 {
            return Err(Error::DimensionTooSmall { dim: n, min: 2 });
        }
        for i in 0..n {
            for j in 0..n {
                if !matrix[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        let scale = matrix.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let tol = SYMMETRY_TOL * scale;
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = (matrix[(i, j)] - matrix[(j, i)]).abs();
                if gap > tol {
                    return Err(Error::NotSymmetric { i, j, gap });
                }
            }
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        // Report failures at the first non-positive pivot in natural order.
        let factor = SqrtFactor::new(&matrix).map_err(|e| cholesky_matrix(&matrix).err().unwrap_or(e))?;
        Ok(Self { matrix, factor })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::from_matrix(DMatrix::identity(dim, dim))
    }

    /// `σ²I + ρσ²(11ᵗ − I)`.
    pub fn exchangeable(dim: usize, sigma2: f64, rho: f64) -> Result<Self> {
        Self::from_matrix(DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                sigma2
            } else {
                rho * sigma2
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn factor(&self) -> &SqrtFactor {
        &self.factor
    }

    pub fn rank(&self) -> usize {
        self.factor.rank()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.matrix.row(i).iter().copied().collect())
            .collect()
    }

    /// `κΣ` for `κ > 0`.
    pub fn scaled(&self, kappa: f64) -> Result<Self> {
        Self::from_matrix(&self.matrix * kappa)
    }
}

impl PartialEq for CovarianceSpec {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl Serialize for CovarianceSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixFile { dim: self.dim(), rows: self.rows() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CovarianceSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = MatrixFile::deserialize(d)?;
        file.into_spec().map_err(serde::de::Error::custom)
    }
}

/// JSON matrix file layout: `{"dim": N, "rows": [[...], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixFile {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

impl MatrixFile {
    pub fn into_spec(self) -> Result<CovarianceSpec> {
        if self.rows.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: self.rows.len() });
        }
        validate_covariance(&self.rows)
    }
}

/// Validates a square, symmetric, positive (semi)definite matrix given as rows.
pub fn validate_covariance(rows: &[Vec<f64>]) -> Result<CovarianceSpec> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::NotSquare { rows: n, row: r, cols: row.len() });
        }
    }
    CovarianceSpec::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Plain lower-triangular Cholesky factor `L` with `LLᵗ = Σ`.
///
/// Unlike the pivoted factor used for sampling this requires strict positive
/// definiteness and reports the first non-positive pivot.
pub fn cholesky(spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    cholesky_matrix(spec.matrix())
}

pub(crate) fn cholesky_matrix(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_rounded_matrices_are_valid() {
        for text in [
            include_str!("../../../../fixtures/extend_sigma_aipw.csv"),
            include_str!("../../../../fixtures/extend_sigma_ipw.csv"),
        ] {
            let s = super::super::io::parse_csv(text).unwrap();
            assert_eq!(s.dim(), 8);
            assert!(s.rank() >= 4 && s.rank() < 8, "rank {}", s.rank());
            assert!(cholesky(&s).is_err());
        }
    }

    #[test]
    fn identity_is_valid() {
        let s = CovarianceSpec::identity(4).unwrap();
        assert_eq!(s.dim(), 4);
        assert_eq!(s.rank(), 4);
    }

    #[test]
    fn indefinite_is_rejected() {
        let err = validate_covariance(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { pivot: 1, .. }), "{err:?}");
    }

    #[test]
    fn ragged_and_asymmetric_inputs() {
        assert!(matches!(
            validate_covariance(&[vec![1.0, 0.0], vec![0.0]]),
            Err(Error::NotSquare { row: 1, .. })
        ));
        assert!(matches!(
            validate_covariance(&[vec![1.0, 0.1], vec![0.2, 1.0]]),
            Err(Error::NotSymmetric { i: 0, j: 1, .. })
        ));
        assert!(matches!(
            validate_covariance(&[vec![1.0]]),
            Err(Error::DimensionTooSmall { .. })
        ));
        assert!(matches!(
            validate_covariance(&[vec![1.0, f64::NAN], vec![f64::NAN, 1.0]]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn tiny_asymmetry_is_averaged() {
        let s = validate_covariance(&[vec![2.0, 0.5], vec![0.5 + 1e-13, 2.0]]).unwrap();
        assert_eq!(s.get(0, 1), s.get(1, 0));
    }

    #[test]
    fn cholesky_examples() {
        let l = cholesky(&CovarianceSpec::identity(3).unwrap()).unwrap();
        assert_eq!(l, DMatrix::identity(3, 3));

        let d = validate_covariance(&[vec![4.0, 0.0], vec![0.0, 9.0]]).unwrap();
        let l = cholesky(&d).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));

        // hand Cholesky of [[1, .5], [.5, 1]]
        let e = CovarianceSpec::exchangeable(2, 1.0, 0.5).unwrap();
        let l = cholesky(&e).unwrap();
        assert!((l[(1, 0)] - 0.5).abs() < 1e-15);
        assert!((l[(1, 1)] - 0.75f64.sqrt()).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn cholesky_rejects_singular() {
        let s = validate_covariance(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(s.rank(), 1);
        assert!(matches!(cholesky(&s), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
    }

    #[test]
    fn json_round_trip() {
        let s = CovarianceSpec::exchangeable(3, 2.0, 0.3).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: CovarianceSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }
}
