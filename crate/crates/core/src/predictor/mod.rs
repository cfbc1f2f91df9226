//! Output-length prediction: the mixture-of-experts regressor, its
//! single-network and history baselines, and oracle stand-ins.

pub mod baseline;
pub mod checkpoint;
pub mod mlp;
pub mod moe;
pub mod tfidf;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

pub use baseline::{HistoryPredictor, NoisyOracle, OraclePredictor};
pub use checkpoint::{load_model, save_model, LengthModel};
pub use moe::{remaining_from_total, train_moe, train_single_mlp, MlpRegressor, MoeModel, TargetScaler, TrainConfig};
pub use tfidf::{fit_tfidf, SparseVec, TfidfVocab};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::workload::RequestSpec;

/// Anything the router can ask for a remaining-length estimate.
pub trait LengthPredictor {
    fn name(&self) -> String;

    /// Tokens still to be generated after `generated` have been produced.
    /// Always at least 1.
    fn predict_remaining(&mut self, request: &RequestSpec, generated: u32) -> u32;

    /// Called once per finished request with its true length.
    fn observe_completion(&mut self, _request: &RequestSpec) {}

    /// Initial predictions for many requests.
    fn predict_batch(&mut self, requests: &[&RequestSpec]) -> Vec<u32> {
        requests.iter().map(|r| self.predict_remaining(r, 0)).collect()
    }
}

impl<T: Real> LengthPredictor for MoeModel<T> {
    fn name(&self) -> String {
        "moe".into()
    }

    fn predict_remaining(&mut self, request: &RequestSpec, generated: u32) -> u32 {
        MoeModel::predict_remaining(self, &request.prompt, generated)
    }

    fn predict_batch(&mut self, requests: &[&RequestSpec]) -> Vec<u32> {
        let hs: Vec<_> = requests.iter().map(|r| self.featurize(&r.prompt, 0)).collect();
        MoeModel::predict_batch(self, &hs)
            .into_iter()
            .map(|t| remaining_from_total(t, 0))
            .collect()
    }
}

impl<T: Real> LengthPredictor for MlpRegressor<T> {
    fn name(&self) -> String {
        "single-mlp".into()
    }

    fn predict_remaining(&mut self, request: &RequestSpec, generated: u32) -> u32 {
        MlpRegressor::predict_remaining(self, &request.prompt, generated)
    }
}

impl<T: Real> LengthPredictor for LengthModel<T> {
    fn name(&self) -> String {
        match self {
            LengthModel::Moe(m) => LengthPredictor::name(m),
            LengthModel::SingleMlp(m) => LengthPredictor::name(m),
        }
    }

    fn predict_remaining(&mut self, request: &RequestSpec, generated: u32) -> u32 {
        match self {
            LengthModel::Moe(m) => LengthPredictor::predict_remaining(m, request, generated),
            LengthModel::SingleMlp(m) => LengthPredictor::predict_remaining(m, request, generated),
        }
    }

    fn predict_batch(&mut self, requests: &[&RequestSpec]) -> Vec<u32> {
        match self {
            LengthModel::Moe(m) => LengthPredictor::predict_batch(m, requests),
            LengthModel::SingleMlp(m) => LengthPredictor::predict_batch(m, requests),
        }
    }
}

impl<P: LengthPredictor + ?Sized> LengthPredictor for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn predict_remaining(&mut self, request: &RequestSpec, generated: u32) -> u32 {
        (**self).predict_remaining(request, generated)
    }

    fn observe_completion(&mut self, request: &RequestSpec) {
        (**self).observe_completion(request)
    }

    fn predict_batch(&mut self, requests: &[&RequestSpec]) -> Vec<u32> {
        (**self).predict_batch(requests)
    }
}

/// Predictor choice as written on the command line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PredictorKind {
    Moe,
    SingleMlp,
    History,
    Oracle,
    /// Oracle with multiplicative Gaussian noise of this relative std.
    Noisy(f64),
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moe" => Ok(PredictorKind::Moe),
            "single-mlp" => Ok(PredictorKind::SingleMlp),
            "history" => Ok(PredictorKind::History),
            "oracle" => Ok(PredictorKind::Oracle),
            _ => {
                let sigma = s
                    .strip_prefix("noisy:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite() && *v >= 0.0);
                match sigma {
                    Some(v) => Ok(PredictorKind::Noisy(v)),
                    None => Err(Error::Validation(format!(
                        "unknown predictor {s:?}; expected one of moe, single-mlp, history, oracle, noisy:<sigma>"
                    ))),
                }
            }
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorKind::Moe => f.write_str("moe"),
            PredictorKind::SingleMlp => f.write_str("single-mlp"),
            PredictorKind::History => f.write_str("history"),
            PredictorKind::Oracle => f.write_str("oracle"),
            PredictorKind::Noisy(s) => write!(f, "noisy:{s}"),
        }
    }
}

/// Held-out accuracy and speed of one predictor.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Evaluation {
    pub predictor: String,
    pub samples: usize,
    pub mae: f64,
    pub normalized_mae: f64,
    /// Wall-clock of one batched call over the whole test set, per request.
    pub batched_ms_per_request: f64,
}

/// Shows `history` to the predictor as completed requests, then predicts
/// every request of `test` in one batch.
pub fn evaluate(predictor: &mut dyn LengthPredictor, history: &[RequestSpec], test: &[RequestSpec]) -> Result<Evaluation> {
    for r in history {
        predictor.observe_completion(r);
    }
    let refs: Vec<&RequestSpec> = test.iter().collect();
    let start = Instant::now();
    let predicted = predictor.predict_batch(&refs);
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let p: Vec<f64> = predicted.iter().map(|&v| v as f64).collect();
    let t: Vec<f64> = test.iter().map(|r| r.output_length as f64).collect();
    Ok(Evaluation {
        predictor: predictor.name(),
        samples: test.len(),
        mae: mae(&p, &t)?,
        normalized_mae: normalized_mae(&p, &t)?,
        batched_ms_per_request: elapsed / test.len() as f64,
    })
}

/// Prompt and true length pairs for training.
pub fn training_pairs(trace: &[RequestSpec]) -> Vec<(&str, u32)> {
    trace.iter().map(|r| (r.prompt.as_str(), r.output_length)).collect()
}

/// Mean absolute error.
pub fn mae(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Validation(format!(
            "length mismatch: {} predictions, {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::Validation("mae of an empty set".into()));
    }
    let total: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / truths.len() as f64)
}

/// MAE divided by the mean truth.
pub fn normalized_mae(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    let err = mae(predictions, truths)?;
    let mean = truths.iter().sum::<f64>() / truths.len() as f64;
    if mean == 0.0 {
        return Err(Error::Validation("normalized mae with zero mean truth".into()));
    }
    Ok(err / mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[10.0], &[20.0]).unwrap(), 10.0);
        assert_eq!(normalized_mae(&[10.0], &[20.0]).unwrap(), 0.5);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn predictor_kind_parses() {
        assert_eq!("moe".parse::<PredictorKind>().unwrap(), PredictorKind::Moe);
        assert_eq!("noisy:0.3".parse::<PredictorKind>().unwrap(), PredictorKind::Noisy(0.3));
        assert!("noisy:-1".parse::<PredictorKind>().is_err());
        assert!("gpt".parse::<PredictorKind>().is_err());
        for k in ["moe", "single-mlp", "history", "oracle", "noisy:0.25"] {
            assert_eq!(k.parse::<PredictorKind>().unwrap().to_string(), k);
        }
    }

    #[test]
    fn evaluation_of_the_oracle_is_exact() {
        let test: Vec<RequestSpec> = (1..=4)
            .map(|i| RequestSpec {
                id: i,
                arrival_ms: 0.0,
                prompt: "a b".into(),
                input_length: 2,
                output_length: 10 * i as u32,
                task_type: "t".into(),
                deadline_ms: None,
            })
            .collect();
        let e = evaluate(&mut OraclePredictor, &[], &test).unwrap();
        assert_eq!((e.samples, e.mae), (4, 0.0));
        // History sees lengths 10 and 40 first, so predicts their mean of 25.
        let mut h = HistoryPredictor::new(8, 1.0);
        let e = evaluate(&mut h, &[test[0].clone(), test[3].clone()], &test).unwrap();
        assert_eq!(e.mae, (15.0 + 5.0 + 5.0 + 15.0) / 4.0);
        assert!(evaluate(&mut OraclePredictor, &[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn mae_is_nonnegative(pairs in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..50)) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(mae(&p, &t).unwrap() >= 0.0);
        }
    }
}
