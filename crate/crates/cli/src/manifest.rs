//! Config files and the manifests written next to every output.
//!
//! A manifest wraps the fully resolved config of a run. Passing it back as
//! `--config` to the same subcommand repeats the run exactly.

use std::fs;
use std::path::{Path, PathBuf};

use goodput_core::predictor::TrainConfig;
use goodput_core::sim::{Scenario, TraceSource};
use goodput_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FILE_NAME: &str = "manifest.toml";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest<C> {
    pub artifact: String,
    pub artifact_version: String,
    pub command: String,
    pub seed: u64,
    pub config: C,
}

/// Reads either a bare config or a manifest written by `command`.
pub fn load_config<C: DeserializeOwned + Resolve>(path: &Path, command: &str) -> Result<C> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut config: C = if table.contains_key("artifact_version") {
        let m: Manifest<C> = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if m.command != command {
            return Err(Error::Config(format!(
                "{} is a manifest of `{}`, not `{command}`",
                path.display(),
                m.command
            )));
        }
        m.config
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    };
    config.resolve(path.parent().unwrap_or(Path::new(".")));
    Ok(config)
}

pub fn write_manifest<C: Serialize + Resolve + Clone>(dir: &Path, command: &str, seed: u64, config: &C) -> Result<()> {
    let mut config = config.clone();
    config.absolutize()?;
    let m = Manifest {
        artifact: env!("CARGO_PKG_NAME").to_string(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        seed,
        config,
    };
    let text = toml::to_string(&m).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join(FILE_NAME), text)?;
    Ok(())
}

/// Path fields that are relative to the file they were read from.
pub trait Resolve {
    fn paths(&mut self) -> Vec<&mut PathBuf>;

    fn resolve(&mut self, base: &Path) {
        for p in self.paths() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Makes every path absolute so a manifest can be moved.
    fn absolutize(&mut self) -> Result<()> {
        for p in self.paths() {
            *p = fs::canonicalize(&*p)
                .map_err(|e| Error::Config(format!("cannot resolve {}: {e}", p.display())))?;
        }
        Ok(())
    }
}

impl Resolve for Scenario {
    fn paths(&mut self) -> Vec<&mut PathBuf> {
        self.trace.path.iter_mut().chain(self.predictor.checkpoint.iter_mut()).collect()
    }
}

/// Training run: corpus, held-out split and optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    /// `moe` or `single-mlp`.
    #[serde(default = "default_kind")]
    pub kind: String,
    /// `f32` or `f64`.
    #[serde(default = "default_scalar")]
    pub scalar: String,
    pub corpus: TraceSource,
    /// Trailing share of the corpus held out for evaluation.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_kind() -> String {
    "moe".into()
}

fn default_scalar() -> String {
    "f32".into()
}

fn default_test_fraction() -> f64 {
    0.2
}

impl TrainSpec {
    /// The nine-family corpus with 8000 training and 2000 held-out samples.
    pub fn preset(seed: u64) -> Self {
        TrainSpec {
            kind: default_kind(),
            scalar: default_scalar(),
            corpus: TraceSource {
                path: None,
                synthetic: Some(goodput_core::experiments::predictor_corpus_config(10_000, seed)),
            },
            test_fraction: default_test_fraction(),
            train: TrainConfig { seed, ..TrainConfig::default() },
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        if let Some(c) = self.corpus.synthetic.as_mut() {
            c.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction must be in (0, 1), got {}", self.test_fraction)));
        }
        if !matches!(self.kind.as_str(), "moe" | "single-mlp") {
            return Err(Error::Config(format!("kind must be moe or single-mlp, got {:?}", self.kind)));
        }
        if !matches!(self.scalar.as_str(), "f32" | "f64") {
            return Err(Error::Config(format!("scalar must be f32 or f64, got {:?}", self.scalar)));
        }
        match (&self.corpus.path, &self.corpus.synthetic) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::Config("corpus needs exactly one of path or synthetic".into())),
        }
        self.train.tiers().map(|_| ())
    }

    pub fn corpus(&self) -> Result<Vec<goodput_core::workload::RequestSpec>> {
        match (&self.corpus.path, &self.corpus.synthetic) {
            (Some(p), _) => goodput_core::workload::load_trace(p),
            (None, Some(c)) => goodput_core::workload::generate_synthetic(c),
            (None, None) => Err(Error::Config("no corpus source".into())),
        }
    }

    /// Index where the held-out tail starts.
    pub fn split_at(&self, n: usize) -> usize {
        ((n as f64) * (1.0 - self.test_fraction)).round() as usize
    }
}

impl Resolve for TrainSpec {
    fn paths(&mut self) -> Vec<&mut PathBuf> {
        self.corpus.path.iter_mut().collect()
    }
}

/// Evaluation run: the training corpus and split plus what to score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub data: TrainSpec,
    pub checkpoint: Option<PathBuf>,
    /// Baseline predictor kinds scored next to the checkpoint.
    pub baselines: Vec<String>,
}

impl Resolve for EvalSpec {
    fn paths(&mut self) -> Vec<&mut PathBuf> {
        self.data.corpus.path.iter_mut().chain(self.checkpoint.iter_mut()).collect()
    }
}

/// Overhead benchmark settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub instances: Vec<usize>,
    pub rps: f64,
    pub decisions: usize,
    pub max_batch: usize,
    pub predictor: String,
    pub checkpoint: Option<PathBuf>,
    /// Used to train a model in-process when no checkpoint is given.
    pub training: TrainSpec,
}

impl Resolve for BenchSpec {
    fn paths(&mut self) -> Vec<&mut PathBuf> {
        self.checkpoint.iter_mut().chain(self.training.corpus.path.iter_mut()).collect()
    }
}

/// Command recorded in a manifest, or `None` for a bare config.
pub fn manifest_command(path: &Path) -> Result<Option<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(table.get("command").and_then(|c| c.as_str()).map(str::to_owned))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_keeps_the_tail_for_testing() {
        let t = TrainSpec::preset(1);
        assert_eq!(t.split_at(10_000), 8000);
        assert_eq!(t.split_at(5), 4);
        t.validate().unwrap();
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut e = EvalSpec { data: TrainSpec::preset(0), checkpoint: Some("m/model.json".into()), baselines: vec![] };
        e.resolve(Path::new("/runs/x"));
        assert_eq!(e.checkpoint.as_deref(), Some(Path::new("/runs/x/m/model.json")));
        let mut abs = e.clone();
        abs.resolve(Path::new("/elsewhere"));
        assert_eq!(abs, e);
    }

    #[test]
    fn bare_configs_and_manifests_load_alike() {
        let dir = tempfile::tempdir().unwrap();
        let spec = TrainSpec::preset(4);
        write_manifest(dir.path(), "train-predictor", 4, &spec).unwrap();
        let path = dir.path().join(FILE_NAME);
        assert_eq!(load_config::<TrainSpec>(&path, "train-predictor").unwrap(), spec);
        assert!(load_config::<TrainSpec>(&path, "simulate").is_err());
        assert_eq!(manifest_command(&path).unwrap().as_deref(), Some("train-predictor"));
        let bare = dir.path().join("bare.toml");
        fs::write(&bare, toml::to_string(&spec).unwrap()).unwrap();
        assert_eq!(load_config::<TrainSpec>(&bare, "train-predictor").unwrap(), spec);
        assert_eq!(manifest_command(&bare).unwrap(), None);
    }
}
