//! Simulation harness: data-generating processes, the enumeration oracle and
//! the experiment runner.

pub mod brute_force;
pub mod dgp;
pub mod experiment;

pub use brute_force::{brute_force_first, brute_force_posterior};
pub use dgp::{CoefDist, CovKind, Instance, ResponseModel};
pub use experiment::{
    paired_power_difference, run_experiment, run_experiment_with, summarize, ExperimentConfig,
    Framework, KnockoffSetting, MeanSe, MethodSummary, ResultRecord, RunOptions,
};
