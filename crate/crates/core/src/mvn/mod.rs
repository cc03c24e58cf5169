//! Covariance validation, square-root factors, multivariate normal sampling
//! and empirical quantiles.

mod covariance;
mod factor;
pub mod io;
mod quantile;
mod sample;

pub use covariance::{
    cholesky, validate_covariance, CovarianceSpec, MatrixFile, SEMIDEFINITE_TOL, SYMMETRY_TOL,
};
pub use factor::SqrtFactor;
pub use quantile::{empirical_quantile, quantile_in_place, quantile_rank};
pub use sample::{sample_mvn, MonteCarloConfig, MvnSample};
pub(crate) use sample::sample_unchecked;
