//! Mixture-of-experts output-length regressor.
//!
//! A shallow gate maps TF-IDF features to a softmax over `K` experts; each
//! expert is a deeper MLP producing a standardized length. The prediction is
//! the gate-weighted sum of expert outputs.
//!
//! Training runs in two phases over a seeded split of the data. Half A is cut
//! into `K` cells by `√K` equal-mass tiers of input length crossed with `√K`
//! tiers of output length, and expert `k` only ever sees cell `k`. With the
//! experts frozen, the gate is then fit on half B against the combined
//! prediction.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{self, huber, Layer, Mlp, Sgd, SparseBatch};
use super::tfidf::{fit_tfidf, SparseVec, TfidfVocab};
use crate::error::{Error, Result};
use crate::num::{softmax_into, Real};

/// Standardization of length targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn fit(lengths: impl Iterator<Item = f64> + Clone) -> Self {
        let n = lengths.clone().count().max(1) as f64;
        let mean = lengths.clone().sum::<f64>() / n;
        let var = lengths.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        // A constant target would otherwise divide by zero.
        TargetScaler { mean, std: var.sqrt().max(1.0) }
    }

    pub fn standardize(&self, length: f64) -> f64 {
        (length - self.mean) / self.std
    }

    pub fn restore(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Expert count; a perfect square.
    pub experts: usize,
    pub epochs: usize,
    pub gate_epochs: usize,
    pub learning_rate: f64,
    /// Step size for the gating phase.
    pub gate_learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Huber threshold in standardized units.
    pub huber_delta: f64,
    pub hidden_width: usize,
    pub vocab_cap: usize,
    pub window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            experts: 9,
            epochs: 60,
            gate_epochs: 60,
            learning_rate: 0.2,
            gate_learning_rate: 0.2,
            batch_size: 32,
            seed: 0,
            huber_delta: 1.0,
            hidden_width: 128,
            vocab_cap: 4096,
            window: 1024,
        }
    }
}

impl TrainConfig {
    pub fn tiers(&self) -> Result<usize> {
        let t = (self.experts as f64).sqrt().round() as usize;
        if self.experts == 0 || t * t != self.experts {
            return Err(Error::Validation(format!(
                "expert count {} is not a positive perfect square",
                self.experts
            )));
        }
        Ok(t)
    }

    fn sgd(&self, epochs: usize, seed: u64) -> Sgd {
        Sgd { epochs, learning_rate: self.learning_rate, batch_size: self.batch_size, seed }
    }

    fn gate_sgd(&self, seed: u64) -> Sgd {
        Sgd { learning_rate: self.gate_learning_rate, ..self.sgd(self.gate_epochs, seed) }
    }

    fn expert_dims(&self, input: usize) -> Vec<usize> {
        let w = self.hidden_width;
        vec![input, w, w, w, 1]
    }

    fn gate_dims(&self, input: usize) -> Vec<usize> {
        vec![input, self.hidden_width, self.experts]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct MoeModel<T> {
    pub gate: Mlp<T>,
    pub experts: Vec<Mlp<T>>,
    pub vocab: TfidfVocab<T>,
    pub scaler: TargetScaler,
    /// Gate and expert first layers side by side, built by the first
    /// batched prediction. Weight edits after that are not seen by
    /// `predict_batch`.
    #[serde(skip)]
    fused: OnceLock<Layer<T>>,
}

/// Single four-layer regressor over the same features.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct MlpRegressor<T> {
    pub net: Mlp<T>,
    pub vocab: TfidfVocab<T>,
    pub scaler: TargetScaler,
}

impl<T: Real> PartialEq for MoeModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.gate == other.gate
            && self.experts == other.experts
            && self.vocab == other.vocab
            && self.scaler == other.scaler
    }
}

impl<T: Real> PartialEq for MlpRegressor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.net == other.net && self.vocab == other.vocab && self.scaler == other.scaler
    }
}

/// Remaining-length rule shared by every model-based predictor.
pub fn remaining_from_total(total: f64, generated: u32) -> u32 {
    let rounded = total.round().max(1.0);
    let left = rounded - generated as f64;
    if left < 1.0 {
        1
    } else {
        left.min(u32::MAX as f64) as u32
    }
}

struct Prepared<T> {
    vocab: TfidfVocab<T>,
    features: Vec<SparseVec<T>>,
    inputs: Vec<u32>,
    outputs: Vec<u32>,
    scaler: TargetScaler,
}

fn prepare<T: Real, P: AsRef<str>>(dataset: &[(P, u32)], cfg: &TrainConfig) -> Result<Prepared<T>> {
    if dataset.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    if let Some((_, l)) = dataset.iter().find(|(_, l)| *l == 0) {
        return Err(Error::Validation(format!("output length {l} must be >= 1")));
    }
    let prompts: Vec<&str> = dataset.iter().map(|(p, _)| p.as_ref()).collect();
    let vocab: TfidfVocab<T> = fit_tfidf(&prompts, cfg.vocab_cap, cfg.window)?;
    let features = prompts
        .iter()
        .map(|p| vocab.featurize_with_generated(p, 0))
        .collect();
    let inputs = prompts.iter().map(|p| crate::workload::tokenize(p).count() as u32).collect();
    let outputs: Vec<u32> = dataset.iter().map(|(_, l)| *l).collect();
    let scaler = TargetScaler::fit(outputs.iter().map(|&l| l as f64));
    Ok(Prepared { vocab, features, inputs, outputs, scaler })
}

/// Equal-mass tier boundaries from `values`.
fn tier_bounds(values: &mut [u32], tiers: usize) -> Vec<u32> {
    values.sort_unstable();
    (1..tiers).map(|j| values[j * values.len() / tiers]).collect()
}

fn tier_of(bounds: &[u32], v: u32) -> usize {
    bounds.partition_point(|&b| b <= v)
}

fn seed_for(base: u64, salt: u64) -> u64 {
    base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

pub fn train_moe<T: Real, P: AsRef<str>>(dataset: &[(P, u32)], cfg: &TrainConfig) -> Result<MoeModel<T>> {
    let tiers = cfg.tiers()?;
    let k = cfg.experts;
    if dataset.len() < 2 * k {
        return Err(Error::Validation(format!(
            "need at least {} samples for {k} experts, got {}",
            2 * k,
            dataset.len()
        )));
    }
    let data = prepare::<T, P>(dataset, cfg)?;
    let dim = data.vocab.len();

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let (half_a, half_b) = order.split_at(order.len() / 2);

    let in_bounds = tier_bounds(&mut half_a.iter().map(|&i| data.inputs[i]).collect::<Vec<_>>(), tiers);
    let out_bounds = tier_bounds(&mut half_a.iter().map(|&i| data.outputs[i]).collect::<Vec<_>>(), tiers);
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in half_a {
        let cell = tier_of(&in_bounds, data.inputs[i]) * tiers + tier_of(&out_bounds, data.outputs[i]);
        cells[cell].push(i);
    }

    let targets: Vec<T> = data
        .outputs
        .iter()
        .map(|&l| T::lit(data.scaler.standardize(l as f64)))
        .collect();
    let delta = T::lit(cfg.huber_delta);

    let mut experts = Vec::with_capacity(k);
    for cell in 0..k {
        let members = if cells[cell].is_empty() {
            let src = nearest_nonempty(&cells, cell, tiers);
            log::warn!("expert {cell}: empty tier cell, training on cell {src} instead");
            &cells[src]
        } else {
            &cells[cell]
        };
        let mut net = Mlp::new(&cfg.expert_dims(dim), seed_for(cfg.seed, cell as u64 + 1));
        let xs: Vec<&SparseVec<T>> = members.iter().map(|&i| &data.features[i]).collect();
        let ys: Vec<T> = members.iter().map(|&i| targets[i]).collect();
        mlp::train_regression(&mut net, &xs, &ys, delta, cfg.sgd(cfg.epochs, seed_for(cfg.seed, 1000 + cell as u64)));
        experts.push(net);
    }

    // Phase 2: experts are frozen, so their outputs on half B are fixed.
    let frozen: Vec<Vec<T>> = half_b
        .iter()
        .map(|&i| experts.iter().map(|e| e.forward(&data.features[i])[0]).collect())
        .collect();
    let mut gate = Mlp::new(&cfg.gate_dims(dim), seed_for(cfg.seed, 0));
    let xs: Vec<&SparseVec<T>> = half_b.iter().map(|&i| &data.features[i]).collect();
    let ys: Vec<T> = half_b.iter().map(|&i| targets[i]).collect();
    let mut probs = Vec::with_capacity(k);
    mlp::train(&mut gate, &xs, cfg.gate_sgd(seed_for(cfg.seed, 2000)), |i, logits, g| {
        softmax_into(logits, &mut probs);
        let outs = &frozen[i];
        let combined: T = probs.iter().zip(outs).map(|(&p, &e)| p * e).sum();
        let (loss, d) = huber(combined - ys[i], delta);
        for j in 0..g.len() {
            g[j] = d * probs[j] * (outs[j] - combined);
        }
        loss
    });

    Ok(MoeModel { gate, experts, vocab: data.vocab, scaler: data.scaler, fused: OnceLock::new() })
}

fn nearest_nonempty(cells: &[Vec<usize>], cell: usize, tiers: usize) -> usize {
    let (ri, ro) = (cell / tiers, cell % tiers);
    (0..cells.len())
        .filter(|&c| !cells[c].is_empty())
        .min_by_key(|&c| ((c / tiers).abs_diff(ri) + (c % tiers).abs_diff(ro), c))
        .expect("half A is never empty")
}

/// Trains the single-network baseline on the whole dataset.
pub fn train_single_mlp<T: Real, P: AsRef<str>>(
    dataset: &[(P, u32)],
    cfg: &TrainConfig,
) -> Result<MlpRegressor<T>> {
    let data = prepare::<T, P>(dataset, cfg)?;
    let mut net = Mlp::new(&cfg.expert_dims(data.vocab.len()), seed_for(cfg.seed, 1));
    let xs: Vec<&SparseVec<T>> = data.features.iter().collect();
    let ys: Vec<T> = data
        .outputs
        .iter()
        .map(|&l| T::lit(data.scaler.standardize(l as f64)))
        .collect();
    mlp::train_regression(&mut net, &xs, &ys, T::lit(cfg.huber_delta), cfg.sgd(cfg.epochs, seed_for(cfg.seed, 1000)));
    Ok(MlpRegressor { net, vocab: data.vocab, scaler: data.scaler })
}

impl<T: Real> MoeModel<T> {
    pub fn expert_count(&self) -> usize {
        self.experts.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.gate.parameter_count() + self.experts.iter().map(Mlp::parameter_count).sum::<usize>()
    }

    pub fn featurize(&self, prompt: &str, generated: u32) -> SparseVec<T> {
        self.vocab.featurize_with_generated(prompt, generated as usize)
    }

    /// Gating distribution over experts.
    pub fn gate_probs(&self, h: &SparseVec<T>) -> Vec<T> {
        let mut p = Vec::with_capacity(self.experts.len());
        softmax_into(&self.gate.forward(h), &mut p);
        p
    }

    /// Expert outputs restored to token units.
    pub fn expert_outputs(&self, h: &SparseVec<T>) -> Vec<f64> {
        self.experts
            .iter()
            .map(|e| self.scaler.restore(e.forward(h)[0].as_f64()))
            .collect()
    }

    /// Gate-weighted combination in token units, without the floor.
    pub fn predict_unclamped(&self, h: &SparseVec<T>) -> f64 {
        let probs = self.gate_probs(h);
        let z: T = probs
            .iter()
            .zip(&self.experts)
            .map(|(&p, e)| p * e.forward(h)[0])
            .sum();
        self.scaler.restore(z.as_f64())
    }

    /// Predicted total output length, at least 1 token.
    pub fn predict_total(&self, h: &SparseVec<T>) -> f64 {
        let y = self.predict_unclamped(h);
        if y.is_finite() {
            y.max(1.0)
        } else {
            1.0
        }
    }

    pub fn predict_remaining(&self, prompt: &str, generated: u32) -> u32 {
        remaining_from_total(self.predict_total(&self.featurize(prompt, generated)), generated)
    }

    /// Totals for many feature vectors at once, one matrix product per
    /// layer.
    pub fn predict_batch(&self, hs: &[SparseVec<T>]) -> Vec<f64> {
        let k = self.experts.len();
        let rows = hs.len();
        if rows == 0 {
            return Vec::new();
        }
        let refs: Vec<&SparseVec<T>> = hs.iter().collect();
        let batch = SparseBatch::new(&refs);
        let fused = self.fused.get_or_init(|| {
            let nets: Vec<&Mlp<T>> = std::iter::once(&self.gate).chain(&self.experts).collect();
            mlp::fuse_first_layers(&nets)
        });
        let first = batch.project(fused);
        let mut start = 0;
        let mut outs: Vec<Vec<T>> = Vec::with_capacity(k + 1);
        for net in std::iter::once(&self.gate).chain(&self.experts) {
            let w = net.layers[0].outputs;
            let cols = first.chunks_exact(fused.outputs).flat_map(|r| r[start..start + w].iter().copied()).collect();
            outs.push(net.forward_hidden(cols, rows));
            start += w;
        }
        let logits = outs.remove(0);
        let mut acc = vec![T::zero(); rows];
        let mut probs = Vec::with_capacity(k);
        for (b, z) in acc.iter_mut().enumerate() {
            softmax_into(&logits[b * k..(b + 1) * k], &mut probs);
            *z = probs.iter().zip(&outs).map(|(&p, o)| p * o[b]).sum();
        }
        acc.into_iter()
            .map(|z| {
                let y = self.scaler.restore(z.as_f64());
                if y.is_finite() { y.max(1.0) } else { 1.0 }
            })
            .collect()
    }
}

impl<T: Real> MlpRegressor<T> {
    pub fn featurize(&self, prompt: &str, generated: u32) -> SparseVec<T> {
        self.vocab.featurize_with_generated(prompt, generated as usize)
    }

    pub fn predict_total(&self, h: &SparseVec<T>) -> f64 {
        let y = self.scaler.restore(self.net.forward(h)[0].as_f64());
        if y.is_finite() {
            y.max(1.0)
        } else {
            1.0
        }
    }

    pub fn predict_remaining(&self, prompt: &str, generated: u32) -> u32 {
        remaining_from_total(self.predict_total(&self.featurize(prompt, generated)), generated)
    }
}
