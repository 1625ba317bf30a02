//! Monte Carlo laboratory for bandit social learning: myopic agents with
//! confidence-bounded behavioral biases share a two-armed Bernoulli bandit,
//! and this crate estimates how often they stop learning.

pub mod bayes;
pub mod behaviors;
pub mod engine;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod probtools;
pub mod stats;

pub use behaviors::{BehaviorSpec, MixtureComponent, PopulationSpec};
pub use engine::{detect_sampling_failure, run_trajectory, simulate_trial, RunOptions, Trajectory};
pub use error::{Error, Result};
pub use model::{Arm, ArmStats, ConfidenceInterval, Instance, RewardTape};
pub use montecarlo::{
    enumerate_exact, estimate, estimate_failure_probability, estimate_regret, sweep, Estimates, Estimator, ExactResult,
    McSettings, SweepAxis, SweepGrid,
};
pub use stats::EstimateWithCI;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
