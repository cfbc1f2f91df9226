//! Deadline-aware request routing for LLM serving on heterogeneous GPU
//! instances, with the length predictor, status estimators and a
//! discrete-event cluster simulator used to evaluate it.
//!
//! Numeric parts are generic over [`num::Real`]; the aliases below fix the
//! precision used by the command-line tool.

pub mod error;
pub mod estimator;
pub mod experiments;
pub mod metrics;
pub mod num;
pub mod predictor;
pub mod router;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};

/// Scalar used for trained models and checkpoints by default.
pub type Scalar = f32;

pub type Moe = predictor::MoeModel<Scalar>;
pub type SingleMlp = predictor::MlpRegressor<Scalar>;
pub type Model = predictor::LengthModel<Scalar>;
pub type Vocab = predictor::TfidfVocab<Scalar>;
pub type Features = predictor::SparseVec<Scalar>;
/// Smoothed per-instance status; kept in `f64` because latencies mix
/// millisecond and microsecond magnitudes.
pub type InstanceStatus = estimator::InstanceEstimate<f64>;
pub type ClusterEstimator = estimator::Estimator<f64>;
