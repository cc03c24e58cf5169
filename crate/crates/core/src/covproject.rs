//! Frobenius-nearest structured covariance matrices.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mvn::{cholesky, CovarianceSpec};
use crate::registry::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExchangeableParams {
    pub sigma2: f64,
    pub rho: f64,
}

impl ExchangeableParams {
    pub fn assemble(&self, dim: usize) -> DMatrix<f64> {
        let off = self.rho * self.sigma2;
        DMatrix::from_fn(dim, dim, |i, j| if i == j { self.sigma2 } else { off })
    }
}

/// One singleton arm plus one exchangeable block of the remaining arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockExchangeableParams {
    pub singleton: usize,
    pub sigma1w2: f64,
    pub sigma2w2: f64,
    pub rho1: f64,
    pub rho2: f64,
}

impl BlockExchangeableParams {
    pub fn assemble(&self, dim: usize) -> DMatrix<f64> {
        let s = self.singleton;
        let cross = self.rho1 * (self.sigma1w2 * self.sigma2w2).sqrt();
        let within = self.rho2 * self.sigma2w2;
        DMatrix::from_fn(dim, dim, |i, j| match (i == s, j == s) {
            (true, true) => self.sigma1w2,
            (true, false) | (false, true) => cross,
            _ if i == j => self.sigma2w2,
            _ => within,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "structure", rename_all = "snake_case")]
pub enum StructureParams {
    Exchangeable(ExchangeableParams),
    BlockExchangeable(BlockExchangeableParams),
}

/// A projected matrix. Results outside the positive definite cone are kept
/// for inspection and flagged rather than repaired.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected<P> {
    pub params: P,
    pub matrix: DMatrix<f64>,
    pub positive_definite: bool,
}

impl<P> Projected<P> {
    /// The projection as a covariance, failing when it left the PD cone.
    pub fn spec(&self) -> Result<CovarianceSpec> {
        let spec = CovarianceSpec::from_matrix(self.matrix.clone())?;
        if !self.positive_definite {
            cholesky(&spec)?;
        }
        Ok(spec)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.matrix.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

// Mean that returns the common value exactly when all entries agree, so
// projecting a structured matrix is a fixed point.
fn mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let first = it.next().unwrap_or(0.0);
    if it.all(|x| x == first) {
        return first;
    }
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    CovarianceSpec::from_matrix(m.clone()).and_then(|s| cholesky(&s)).is_ok()
}

pub fn project_exchangeable(spec: &CovarianceSpec) -> Projected<ExchangeableParams> {
    project_exchangeable_matrix(spec.matrix())
}

/// Projection of any square matrix; the input need not be a valid covariance.
pub fn project_exchangeable_matrix(m: &DMatrix<f64>) -> Projected<ExchangeableParams> {
    let n = m.nrows();
    let sigma2 = mean((0..n).map(|i| m[(i, i)]));
    let off = mean((0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]));
    let rho = if sigma2 > 0.0 { off / sigma2 } else { 0.0 };
    let params = ExchangeableParams { sigma2, rho };
    let mut matrix = params.assemble(n);
    // keep the off-diagonal at the exact mean rather than ρ·σ²
    for i in 0..n {
        for j in 0..n {
            if i != j {
                matrix[(i, j)] = off;
            }
        }
    }
    let positive_definite = is_positive_definite(&matrix);
    Projected { params, matrix, positive_definite }
}

/// Block layout: arm `block_start − 1` is the singleton and every other arm
/// forms the block. `block_start = 1` gives the first-arm singleton layout.
pub fn project_block_exchangeable(spec: &CovarianceSpec, block_start: usize) -> Result<Projected<BlockExchangeableParams>> {
    project_block_exchangeable_matrix(spec.matrix(), block_start)
}

pub fn project_block_exchangeable_matrix(
    m: &DMatrix<f64>,
    block_start: usize,
) -> Result<Projected<BlockExchangeableParams>> {
    let n = m.nrows();
    if n < 3 {
        return Err(Error::DimensionTooSmall { dim: n, min: 3 });
    }
    if block_start == 0 || block_start >= n {
        return Err(Error::InvalidArgument(format!("block_start must be in 1..{n}, got {block_start}")));
    }
    let s = block_start - 1;
    let block: Vec<usize> = (0..n).filter(|&i| i != s).collect();
    let sigma1w2 = m[(s, s)];
    let sigma2w2 = mean(block.iter().map(|&i| m[(i, i)]));
    let cross = mean(block.iter().map(|&j| m[(s, j)]));
    let within = mean(
        block
            .iter()
            .flat_map(|&i| block.iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
            .map(|(i, j)| m[(i, j)]),
    );
    let scale = (sigma1w2 * sigma2w2).sqrt();
    let rho1 = if scale > 0.0 { cross / scale } else { 0.0 };
    let rho2 = if sigma2w2 > 0.0 { within / sigma2w2 } else { 0.0 };
    let params = BlockExchangeableParams { singleton: s, sigma1w2, sigma2w2, rho1, rho2 };
    let matrix = DMatrix::from_fn(n, n, |i, j| match (i == s, j == s) {
        (true, true) => sigma1w2,
        (true, false) | (false, true) => cross,
        _ if i == j => sigma2w2,
        _ => within,
    });
    let positive_definite = is_positive_definite(&matrix);
    Ok(Projected { params, matrix, positive_definite })
}

pub fn frobenius_distance(a: &CovarianceSpec, b: &CovarianceSpec) -> Result<f64> {
    frobenius_matrix(a.matrix(), b.matrix())
}

pub fn frobenius_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), actual: b.nrows() });
    }
    Ok((a - b).norm())
}

/// A covariance structure family with a nearest-member projection.
pub trait Projection: Send + Sync {
    fn name(&self) -> &'static str;
    fn project(&self, spec: &CovarianceSpec) -> Result<Projected<StructureParams>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Exchangeable;

impl Projection for Exchangeable {
    fn name(&self) -> &'static str {
        "exchangeable"
    }

    fn project(&self, spec: &CovarianceSpec) -> Result<Projected<StructureParams>> {
        let p = project_exchangeable(spec);
        Ok(Projected { params: StructureParams::Exchangeable(p.params), matrix: p.matrix, positive_definite: p.positive_definite })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BlockExchangeable {
    pub block_start: usize,
}

impl Default for BlockExchangeable {
    fn default() -> Self {
        Self { block_start: 1 }
    }
}

impl Projection for BlockExchangeable {
    fn name(&self) -> &'static str {
        "block_exchangeable"
    }

    fn project(&self, spec: &CovarianceSpec) -> Result<Projected<StructureParams>> {
        let p = project_block_exchangeable(spec, self.block_start)?;
        Ok(Projected {
            params: StructureParams::BlockExchangeable(p.params),
            matrix: p.matrix,
            positive_definite: p.positive_definite,
        })
    }
}

pub fn projections(block_start: usize) -> Registry<dyn Projection> {
    let mut r: Registry<dyn Projection> = Registry::new("structure");
    r.register("exchangeable", Box::new(Exchangeable));
    r.register("block_exchangeable", Box::new(BlockExchangeable { block_start }));
    r
}
