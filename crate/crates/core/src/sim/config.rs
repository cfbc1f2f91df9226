//! Scenario files: one TOML document naming instances, the policy arm,
//! the trace, deadlines and the predictor.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::GpuProfile;
use crate::error::{Error, Result};
use crate::estimator::{EmaConfig, PrefixCacheConfig};
use crate::predictor::baseline::{HistoryPredictor, NoisyOracle, OraclePredictor};
use crate::predictor::checkpoint::{self, LengthModel};
use crate::predictor::{LengthPredictor, PredictorKind};
use crate::router::{MigrationMode, ModelProfile, PolicyKind, RiskCheckConfig};
use crate::workload::{self, RequestSpec, SloPolicy, TraceConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub instances: Vec<GpuProfile>,
    pub policy: PolicyKind,
    /// Enables periodic risk checks and migrations for SLO-aware policies.
    pub migration: bool,
    pub migration_mode: MigrationMode,
    pub link_bandwidth_bps: f64,
    pub model: ModelProfile,
    pub risk: RiskCheckConfig,
    pub ema: EmaConfig,
    pub prefix_cache: PrefixCacheConfig,
    pub tpm_window_ms: f64,
    pub affinity_lambda: f64,
    /// Keep every estimator update for the state dump.
    pub record_estimator: bool,
    /// Time each routing decision with the wall clock. Off by default so
    /// reports stay reproducible.
    pub measure_overhead: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            instances: GpuProfile::defaults(),
            policy: PolicyKind::Goodserve,
            migration: true,
            migration_mode: MigrationMode::TokenIds,
            link_bandwidth_bps: 10e9,
            model: ModelProfile::default(),
            risk: RiskCheckConfig::default(),
            ema: EmaConfig::default(),
            prefix_cache: PrefixCacheConfig::default(),
            tpm_window_ms: 60_000.0,
            affinity_lambda: 0.5,
            record_estimator: false,
            measure_overhead: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances.is_empty() {
            return Err(Error::Config("at least one instance is required".into()));
        }
        for p in &self.instances {
            p.validate()?;
        }
        if !(self.link_bandwidth_bps > 0.0 && self.link_bandwidth_bps.is_finite()) {
            return Err(Error::Config("link bandwidth must be > 0".into()));
        }
        if self.prefix_cache.block_size == 0 {
            return Err(Error::Config("prefix block size must be >= 1".into()));
        }
        if !(self.tpm_window_ms > 0.0) {
            return Err(Error::Config("tpm window must be > 0".into()));
        }
        self.ema.validate()?;
        self.risk.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    pub path: Option<PathBuf>,
    pub synthetic: Option<TraceConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SloSpec {
    /// Keep the deadlines already in the trace.
    FromTrace,
    Fixed { deadline_ms: f64 },
    Scaled { reference_profile: String, relaxation_factor: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSpec {
    /// One of moe, single-mlp, history, oracle, noisy:<sigma>.
    pub kind: String,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_history_window")]
    pub history_window: usize,
    #[serde(default = "default_history_prior")]
    pub history_prior: f64,
}

fn default_history_window() -> usize {
    256
}

fn default_history_prior() -> f64 {
    256.0
}

impl Default for PredictorSpec {
    fn default() -> Self {
        PredictorSpec {
            kind: "oracle".into(),
            checkpoint: None,
            history_window: default_history_window(),
            history_prior: default_history_prior(),
        }
    }
}

impl PredictorSpec {
    pub fn parsed_kind(&self) -> Result<PredictorKind> {
        self.kind.parse()
    }

    /// Builds the predictor; model kinds load `checkpoint`.
    pub fn build(&self, seed: u64) -> Result<Box<dyn LengthPredictor>> {
        Ok(match self.parsed_kind()? {
            PredictorKind::Oracle => Box::new(OraclePredictor),
            PredictorKind::Noisy(sigma) => Box::new(NoisyOracle::new(sigma, seed)),
            PredictorKind::History => Box::new(HistoryPredictor::new(self.history_window, self.history_prior)),
            kind @ (PredictorKind::Moe | PredictorKind::SingleMlp) => {
                let path = self.checkpoint.as_ref().ok_or_else(|| {
                    Error::Config(format!("predictor {kind} needs a checkpoint path"))
                })?;
                let model = load_dynamic(path)?;
                if model.name() != kind.to_string() {
                    return Err(Error::Config(format!(
                        "checkpoint {} holds a {} model, not {kind}",
                        path.display(),
                        model.name()
                    )));
                }
                model
            }
        })
    }
}

/// Loads a checkpoint of either precision.
pub fn load_dynamic(path: &Path) -> Result<Box<dyn LengthPredictor>> {
    match checkpoint::load_model::<f32>(path) {
        Ok(m) => Ok(Box::new(m)),
        Err(Error::Validation(msg)) if msg.contains("expected f32") => {
            let m: LengthModel<f64> = checkpoint::load_model(path)?;
            Ok(Box::new(m))
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub trace: TraceSource,
    #[serde(default = "default_slo")]
    pub slo: SloSpec,
    #[serde(default)]
    pub predictor: PredictorSpec,
    #[serde(default)]
    pub sim: SimConfig,
}

fn default_slo() -> SloSpec {
    SloSpec::FromTrace
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Reads a scenario and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut s = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = s.trace.path.as_mut() {
            resolve(p);
        }
        if let Some(p) = s.predictor.checkpoint.as_mut() {
            resolve(p);
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.trace.path, &self.trace.synthetic) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::Config("trace needs exactly one of path or synthetic".into())),
        }
        self.predictor.parsed_kind()?;
        self.sim.validate()
    }

    /// Sets the engine seed and, for generated traces, the trace seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        if let Some(t) = self.trace.synthetic.as_mut() {
            t.seed = seed;
        }
    }

    /// Loads or generates the trace and applies the deadline rule.
    pub fn build_trace(&self) -> Result<Vec<RequestSpec>> {
        let trace = match (&self.trace.path, &self.trace.synthetic) {
            (Some(p), _) => workload::load_trace(p)?,
            (None, Some(cfg)) => workload::generate_synthetic(cfg)?,
            (None, None) => return Err(Error::Config("no trace source".into())),
        };
        match &self.slo {
            SloSpec::FromTrace => Ok(trace),
            SloSpec::Fixed { deadline_ms } => {
                if !(*deadline_ms > 0.0) {
                    return Err(Error::Config("deadline must be > 0".into()));
                }
                Ok(workload::assign_fixed_deadline(&trace, *deadline_ms))
            }
            SloSpec::Scaled { reference_profile, relaxation_factor } => workload::assign_slos(
                &trace,
                &SloPolicy { reference_profile: reference_profile.clone(), relaxation_factor: *relaxation_factor },
                &self.sim.instances,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[trace.synthetic]
request_count = 20
seed = 3
arrival = { kind = "poisson", rate_rps = 5.0 }
clusters = [{ name = "chat", input_range = [10, 20], output_range = [5, 50] }]

[slo]
kind = "scaled"
reference_profile = "A40"
relaxation_factor = 2.0

[predictor]
kind = "noisy:0.3"

[sim]
policy = "least_request"
risk = { tau = 25 }
"#;

    #[test]
    fn parses_and_builds() {
        let s = Scenario::from_toml(EXAMPLE).unwrap();
        assert_eq!(s.sim.policy, PolicyKind::LeastRequest);
        assert_eq!(s.sim.risk.tau, 25);
        assert_eq!(s.sim.risk.max_migrations_per_request, 2);
        assert_eq!(s.sim.instances.len(), 4);
        let trace = s.build_trace().unwrap();
        assert_eq!(trace.len(), 20);
        assert!(trace.iter().all(|r| r.deadline_ms.unwrap() > 0.0));
        assert!(s.predictor.build(0).is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::from_toml(EXAMPLE).unwrap();
        let text = s.to_toml().unwrap();
        assert_eq!(Scenario::from_toml(&text).unwrap(), s);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(Scenario::from_toml("[trace]\n").is_err());
        let unknown = EXAMPLE.replace("policy = \"least_request\"", "policy = \"fastest\"");
        assert!(Scenario::from_toml(&unknown).is_err());
        let mut s = Scenario::from_toml(EXAMPLE).unwrap();
        s.predictor.kind = "moe".into();
        assert!(s.predictor.build(0).is_err());
    }
}
