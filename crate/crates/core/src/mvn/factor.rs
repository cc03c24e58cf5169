use nalgebra::DMatrix;

use super::covariance::SEMIDEFINITE_TOL;
use crate::error::{Error, Result};

/// Rank-revealing square root `L` (N × r) with `LLᵗ = Σ`, computed by
/// diagonally pivoted Cholesky. Rows are kept in the original index order.
#[derive(Debug, Clone, PartialEq)]
pub struct SqrtFactor {
    l: DMatrix<f64>,
}

impl SqrtFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let max_diag = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)]));
        if max_diag <= 0.0 {
            let pivot = (0..n)
                .min_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]))
                .unwrap_or(0);
            if a.iter().all(|x| *x == 0.0) {
                return Ok(Self { l: DMatrix::zeros(n, 0) });
            }
            return Err(Error::NotPositiveDefinite { pivot, value: a[(pivot, pivot)] });
        }
        let tol = SEMIDEFINITE_TOL * max_diag;

        // Schur complement in original indexing; `active` marks unpivoted rows.
        let mut s = a.clone();
        let mut active = vec![true; n];
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for _ in 0..n {
            let (p, d) = (0..n)
                .filter(|&i| active[i])
                .map(|i| (i, s[(i, i)]))
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .expect("at least one active row");
            if d <= tol {
                // Remainder must vanish within tolerance for semidefiniteness.
                let mut worst = (p, 0.0f64);
                for i in (0..n).filter(|&i| active[i]) {
                    for j in (0..n).filter(|&j| active[j]) {
                        if s[(i, j)].abs() > worst.1.abs() {
                            worst = (i, s[(i, j)]);
                        }
                    }
                }
                if worst.1.abs() > tol {
                    let pivot = (0..n)
                        .filter(|&i| active[i])
                        .min_by(|&i, &j| s[(i, i)].total_cmp(&s[(j, j)]))
                        .unwrap_or(worst.0);
                    let value = if s[(pivot, pivot)] < -tol { s[(pivot, pivot)] } else { worst.1 };
                    return Err(Error::NotPositiveDefinite { pivot, value });
                }
                break;
            }
            active[p] = false;
            let root = d.sqrt();
            let mut col = vec![0.0; n];
            col[p] = root;
            for i in (0..n).filter(|&i| active[i]) {
                col[i] = s[(i, p)] / root;
            }
            for i in (0..n).filter(|&i| active[i]) {
                for j in (0..n).filter(|&j| active[j]) {
                    s[(i, j)] -= col[i] * col[j];
                }
            }
            cols.push(col);
        }
        let r = cols.len();
        let l = DMatrix::from_fn(n, r, |i, k| cols[k][i]);
        Ok(Self { l })
    }

    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Writes `L·g` into `out`.
    #[inline]
    pub fn apply(&self, g: &[f64], out: &mut [f64]) {
        let r = self.rank();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..r {
                acc += self.l[(i, k)] * g[k];
            }
            *o = acc;
        }
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }
}
