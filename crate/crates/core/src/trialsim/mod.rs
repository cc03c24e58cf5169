//! Simulated two-stage SMARTs, regime-mean estimation and empirical power.

mod design;
mod empirical;
mod estimate;
mod record;

pub use design::{designs, nonresponder_o21_mean, Design1, Design2, Edtr, MsmSpec, SmartDesign};
pub use empirical::{empirical_power, estimate_sigma_true, EmpiricalPower, EmpiricalSetup, DEFAULT_CRITICAL_REPS};
pub use estimate::{
    estimating_function, estimators, fit_aipw, fit_ipw, sandwich_variance, solve_stack, Aipw, Augmentation,
    ConditionalMeans, EstimationResult, Estimator, Ipw, Stack,
};
pub use record::{generate, generate_design1, generate_design2, TrialDataset, TrialRecord};
