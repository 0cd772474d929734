//! Seeded deployment simulation on a synthetic rule world.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod world;

pub use config::{DeploymentConfig, Method};
pub use experiment::{
    aggregate, apply_noise, metrics_csv, run_experiment, run_experiment_with, run_seeds, write_aggregate, write_artifacts,
    AggregateRow, DayOutcome, ExperimentResult, MetricsRow, Providers, Simulation,
};
pub use metrics::{amortized_cost, classification, Classification};
pub use world::{SyntheticWorld, WorldConfig};
