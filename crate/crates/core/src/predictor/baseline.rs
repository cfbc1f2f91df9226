use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LengthPredictor;
use crate::workload::RequestSpec;

/// Running mean of the last `window` completed output lengths.
#[derive(Clone, Debug)]
pub struct HistoryPredictor {
    window: usize,
    prior: f64,
    recent: VecDeque<u32>,
    sum: u64,
}

impl HistoryPredictor {
    pub fn new(window: usize, prior: f64) -> Self {
        HistoryPredictor { window: window.max(1), prior, recent: VecDeque::new(), sum: 0 }
    }

    pub fn observe(&mut self, length: u32) {
        self.recent.push_back(length);
        self.sum += length as u64;
        if self.recent.len() > self.window {
            self.sum -= self.recent.pop_front().unwrap() as u64;
        }
    }

    /// Current estimate of a request's total output length.
    pub fn estimate(&self) -> f64 {
        if self.recent.is_empty() {
            self.prior
        } else {
            self.sum as f64 / self.recent.len() as f64
        }
    }
}

impl Default for HistoryPredictor {
    fn default() -> Self {
        HistoryPredictor::new(256, 256.0)
    }
}

impl LengthPredictor for HistoryPredictor {
    fn name(&self) -> String {
        "history".into()
    }

    fn predict_remaining(&mut self, _request: &RequestSpec, generated: u32) -> u32 {
        super::remaining_from_total(self.estimate(), generated)
    }

    fn observe_completion(&mut self, request: &RequestSpec) {
        self.observe(request.output_length);
    }
}

/// Reads the true length.
#[derive(Clone, Copy, Debug, Default)]
pub struct OraclePredictor;

impl LengthPredictor for OraclePredictor {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict_remaining(&mut self, request: &RequestSpec, generated: u32) -> u32 {
        request.output_length.saturating_sub(generated).max(1)
    }
}

/// True remaining length scaled by `max(1 + σz, 0.1)` with `z ~ N(0, 1)`.
/// The draw depends only on (seed, request id, generated), so a run is
/// reproducible regardless of call order.
#[derive(Clone, Copy, Debug)]
pub struct NoisyOracle {
    pub sigma: f64,
    pub seed: u64,
}

impl NoisyOracle {
    pub fn new(sigma: f64, seed: u64) -> Self {
        NoisyOracle { sigma, seed }
    }

    fn factor(&self, id: u64, generated: u32) -> f64 {
        let key = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(id)
            .rotate_left(29)
            ^ (generated as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
        let z: f64 = StandardNormal.sample(&mut ChaCha8Rng::seed_from_u64(key));
        (1.0 + self.sigma * z).max(0.1)
    }
}

impl LengthPredictor for NoisyOracle {
    fn name(&self) -> String {
        format!("noisy:{}", self.sigma)
    }

    fn predict_remaining(&mut self, request: &RequestSpec, generated: u32) -> u32 {
        let left = request.output_length.saturating_sub(generated).max(1) as f64;
        (left * self.factor(request.id, generated)).round().max(1.0) as u32
    }
}
