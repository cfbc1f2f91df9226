//! Backend selection: the latency model, just-enough selection and the
//! baseline policies, SLO-risk rechecks and migration costing.

pub mod latency;
pub mod log;
pub mod migration;
pub mod risk;
pub mod select;

pub use latency::{estimate_from, estimate_latency};
pub use migration::{migration_cost, transfer_ms, MigrationAction, MigrationCost, MigrationMode, ModelProfile};
pub use risk::{check_risk, ActiveRequest, MigrationModel, RiskCheckConfig};
pub use select::{just_enough, InstanceView, PolicyKind, Router, RoutingDecision};
