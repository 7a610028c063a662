//! Simulation designs, error metrics and the benchmark runner.

pub mod design;
pub mod metrics;
pub mod runner;

pub use design::{generate_dataset, Model, SigmaDesign, SimDesign, Truth};
pub use metrics::{mean_cluster_error, projection_error, sigma_error, subspace_error};
pub use runner::{run_benchmark, score_method, BenchConfig, BenchReport, BenchRow, Method, Scores};
