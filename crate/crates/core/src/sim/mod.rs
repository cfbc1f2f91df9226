//! Deterministic cluster simulator and exhaustive assignment oracle.

pub mod config;
pub mod engine;
pub mod oracle;
pub mod profile;

pub use config::{PredictorSpec, Scenario, SimConfig, SloSpec, TraceSource};
pub use engine::{run, run_assigned, InstanceStats, SimOutput};
pub use oracle::{brute_force_optimal, OptimalAssignment};
pub use profile::GpuProfile;
