//! Routing-overhead benchmark on a virtual clock.
//!
//! Requests arrive as a Poisson stream. A single router thread drains
//! everything that has arrived, predicts lengths for the whole batch, then
//! scores every instance for each request. Service times are wall-clock
//! measurements; waiting is simulated, so a decision's latency is the time
//! from its arrival to the end of the batch that served it.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp};
use serde::{Deserialize, Serialize};

use super::Distribution;
use crate::error::{Error, Result};
use crate::estimator::{block_hashes, ChannelKind, EmaConfig, InstanceEstimate, PrefixCacheConfig, PrefixCacheIndex};
use crate::predictor::LengthPredictor;
use crate::router::{InstanceView, PolicyKind, Router};
use crate::sim::GpuProfile;
use crate::workload::RequestSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub instances: usize,
    pub rps: f64,
    pub decisions: usize,
    /// Upper bound on requests predicted together.
    pub max_batch: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { instances: 512, rps: 10_000.0, decisions: 10_000, max_batch: 256, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub instances: usize,
    pub rps: f64,
    pub decisions: usize,
    pub batches: usize,
    /// Arrival to routing decision, including time spent waiting for the
    /// router, in microseconds.
    pub latency_us: Distribution,
    /// Router compute per decision (batch time divided by batch size).
    pub processing_us: Distribution,
    /// Fraction of the virtual span the router was busy.
    pub utilization: f64,
    pub predictor: String,
}

struct VirtualInstance {
    estimate: InstanceEstimate<f64>,
    cache: PrefixCacheIndex,
    pending: usize,
    free_tokens: u64,
    max_batch: usize,
}

fn virtual_instances(n: usize, prompts: &[RequestSpec], rng: &mut ChaCha8Rng) -> Vec<VirtualInstance> {
    use rand::Rng;
    let profiles = GpuProfile::defaults();
    let ema = EmaConfig::default();
    let cache_cfg = PrefixCacheConfig::default();
    (0..n)
        .map(|g| {
            let p = &profiles[g % profiles.len()];
            let mut estimate = InstanceEstimate::seeded(p.prefill_ms_per_token, p.iter_ms(1));
            let batch = rng.random_range(1..p.max_batch);
            estimate.observe(&ema, ChannelKind::DecodePerToken, p.iter_ms(batch), 0.0);
            estimate.observe(&ema, ChannelKind::QueueWait, rng.random_range(0.0..200.0), 0.0);
            let mut cache = PrefixCacheIndex::new(cache_cfg);
            for _ in 0..4 {
                let r = &prompts[rng.random_range(0..prompts.len())];
                cache.record(&block_hashes(r.tokens(), cache_cfg.block_size));
            }
            VirtualInstance {
                estimate,
                cache,
                pending: batch,
                free_tokens: p.memory_tokens / 2,
                max_batch: p.max_batch,
            }
        })
        .collect()
}

/// Streams `cfg.decisions` requests, cycling through `prompts`, through
/// featurize, predict, estimate and select.
pub fn bench_overhead(
    cfg: &BenchConfig,
    prompts: &[RequestSpec],
    predictor: &mut dyn LengthPredictor,
) -> Result<OverheadReport> {
    if cfg.instances == 0 {
        return Err(Error::Config("bench needs at least one instance".into()));
    }
    if !(cfg.rps > 0.0 && cfg.rps.is_finite()) {
        return Err(Error::Config(format!("request rate must be > 0, got {}", cfg.rps)));
    }
    if prompts.is_empty() || cfg.decisions == 0 || cfg.max_batch == 0 {
        return Err(Error::Config("bench needs prompts, decisions and a batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut instances = virtual_instances(cfg.instances, prompts, &mut rng);
    let gap = Exp::new(cfg.rps / 1e6).map_err(|e| Error::Config(e.to_string()))?;
    let mut arrivals = Vec::with_capacity(cfg.decisions);
    let mut t = 0.0;
    for _ in 0..cfg.decisions {
        t += gap.sample(&mut rng);
        arrivals.push(t);
    }
    let block = PrefixCacheConfig::default().block_size;
    let mut router = Router::new(PolicyKind::Goodserve, cfg.seed);
    let mut views = Vec::with_capacity(cfg.instances);

    let mut latency = Vec::with_capacity(cfg.decisions);
    let mut processing = Vec::with_capacity(cfg.decisions);
    let mut clock = 0.0f64;
    let mut busy = 0.0;
    let mut batches = 0;
    let mut i = 0;
    while i < cfg.decisions {
        let start = clock.max(arrivals[i]);
        let mut j = i + 1;
        while j < cfg.decisions && arrivals[j] <= start && j - i < cfg.max_batch {
            j += 1;
        }
        let batch: Vec<RequestSpec> = (i..j)
            .map(|k| {
                let mut r = prompts[k % prompts.len()].clone();
                r.id = k as u64;
                r
            })
            .collect();
        let refs: Vec<&RequestSpec> = batch.iter().collect();

        let wall = Instant::now();
        let predicted = predictor.predict_batch(&refs);
        for (r, &lout) in batch.iter().zip(&predicted) {
            let hashes = block_hashes(r.tokens(), block);
            views.clear();
            views.extend(instances.iter().map(|v| InstanceView {
                q_ms: v.estimate.q(),
                p_ms: v.estimate.p(),
                d_ms: v.estimate.d(),
                pending: v.pending,
                hit_tokens: v.cache.hit_tokens(&hashes) as u32,
                recent_tokens: 0,
                free_tokens: v.free_tokens,
                max_batch: v.max_batch,
            }));
            let decision = router.select(r, lout, &views)?;
            instances[decision.chosen].pending += 1;
        }
        let elapsed = wall.elapsed().as_secs_f64() * 1e6;

        let end = start + elapsed;
        let n = (j - i) as f64;
        for &a in &arrivals[i..j] {
            latency.push(end - a);
            processing.push(elapsed / n);
        }
        busy += elapsed;
        clock = end;
        batches += 1;
        i = j;
    }
    Ok(OverheadReport {
        instances: cfg.instances,
        rps: cfg.rps,
        decisions: cfg.decisions,
        batches,
        latency_us: Distribution::of(&latency),
        processing_us: Distribution::of(&processing),
        utilization: if clock > 0.0 { busy / clock } else { 0.0 },
        predictor: predictor.name(),
    })
}
