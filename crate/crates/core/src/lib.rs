//! Sample size and power for comparing embedded treatment regimes with
//! multiple comparisons with the best.

pub mod covproject;
pub mod error;
pub mod mcb;
pub mod mvn;
pub mod power;
pub mod registry;
pub mod rng;
pub mod sizing;
pub mod sweeps;
pub mod trialsim;

pub use error::{Error, Result};
pub use mcb::{critical_values, set_of_best, BestSet, CriticalValues, Direction};
pub use mvn::{CovarianceSpec, MonteCarloConfig};
pub use power::{compute_power, power_curve, EffectConfig, MonteCarloEstimate, PowerEngine, PowerResult, Warning};
pub use sizing::{sample_size, sample_size_bisection, SizingResult};
