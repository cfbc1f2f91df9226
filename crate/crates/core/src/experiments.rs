//! Preset workloads and clusters used by the CLI defaults and the
//! acceptance suite.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sim::{GpuProfile, Scenario, SimConfig, SloSpec, TraceSource};
use crate::workload::{ArrivalProcess, TaskCluster, TraceConfig};

/// 600 requests at 10 rps, 100-token prompts, 100 to 500 output tokens,
/// a fixed 6 s deadline, over the four-tier cluster.
pub fn motivation_scenario(seed: u64) -> Scenario {
    Scenario {
        trace: TraceSource {
            path: None,
            synthetic: Some(TraceConfig {
                request_count: 600,
                arrival: ArrivalProcess::Poisson { rate_rps: 10.0 },
                clusters: vec![TaskCluster::new("task", (100, 100), (100, 500))],
                disjoint_vocab: true,
                seed,
            }),
        },
        slo: SloSpec::Fixed { deadline_ms: 6000.0 },
        predictor: Default::default(),
        sim: SimConfig { seed, instances: GpuProfile::defaults(), ..SimConfig::default() },
    }
}

/// Task families of an agentic mix: short lookups, query generation,
/// code edits and long-form reasoning, each with its own system prompt.
pub fn mixed_clusters() -> Vec<TaskCluster> {
    let mut c = vec![
        TaskCluster::new("lookup", (60, 200), (20, 120)),
        TaskCluster::new("sql", (200, 600), (60, 250)),
        TaskCluster::new("code", (400, 1200), (200, 700)),
        TaskCluster::new("reason", (100, 400), (300, 900)),
    ];
    for (cluster, prefix) in c.iter_mut().zip([32, 96, 128, 48]) {
        cluster.shared_prefix = prefix;
        cluster.difficulty_levels = 3;
    }
    c
}

/// The mixed workload with deadlines scaled from solo latency on the
/// mid-tier A800 profile.
pub fn mixed_scenario(seed: u64, slo_scale: f64, request_count: usize, rate_rps: f64) -> Scenario {
    Scenario {
        trace: TraceSource {
            path: None,
            synthetic: Some(TraceConfig {
                request_count,
                arrival: ArrivalProcess::Poisson { rate_rps },
                clusters: mixed_clusters(),
                disjoint_vocab: true,
                seed,
            }),
        },
        slo: SloSpec::Scaled { reference_profile: "A800".into(), relaxation_factor: slo_scale },
        predictor: Default::default(),
        sim: SimConfig { seed, instances: GpuProfile::defaults(), ..SimConfig::default() },
    }
}

/// Nine task families for predictor training. Each has a distinct output
/// band and three difficulty levels whose vocabulary hints at the length.
pub fn predictor_corpus_config(request_count: usize, seed: u64) -> TraceConfig {
    let bands = [
        ("qa", (40, 160), (10, 60)),
        ("sql", (150, 400), (40, 160)),
        ("summ", (600, 1500), (80, 240)),
        ("chat", (30, 200), (60, 400)),
        ("plan", (100, 300), (150, 450)),
        ("code", (300, 900), (200, 800)),
        ("patch", (800, 2000), (100, 600)),
        ("proof", (80, 240), (400, 1200)),
        ("essay", (50, 150), (600, 1600)),
    ];
    let clusters = bands
        .iter()
        .map(|&(name, input, output)| {
            let mut c = TaskCluster::new(name, input, output);
            c.difficulty_levels = 3;
            c.vocab_size = 192;
            c
        })
        .collect();
    TraceConfig {
        request_count,
        arrival: ArrivalProcess::FixedInterval { interval_ms: 10.0 },
        clusters,
        disjoint_vocab: true,
        seed,
    }
}

/// A random scenario small enough for exhaustive search: `instances`
/// distinct default profiles, `requests` requests arriving at 20 rps, and
/// deadlines between 1x and 3x solo latency on the median chosen profile.
/// Migration is off.
pub fn small_scenario(seed: u64, requests: usize, instances: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<GpuProfile> =
        GpuProfile::defaults().choose_multiple(&mut rng, instances).cloned().collect();
    chosen.sort_by(|a, b| a.iter_ms(1).total_cmp(&b.iter_ms(1)));
    let reference = chosen.get(chosen.len() / 2).map(|p| p.name.clone()).unwrap_or_default();
    let factor = rng.random_range(1.0..3.0);
    Scenario {
        trace: TraceSource {
            path: None,
            synthetic: Some(TraceConfig {
                request_count: requests,
                arrival: ArrivalProcess::Poisson { rate_rps: 20.0 },
                clusters: vec![TaskCluster::new("task", (20, 200), (20, 300))],
                disjoint_vocab: true,
                seed: rng.random::<u32>().into(),
            }),
        },
        slo: SloSpec::Scaled { reference_profile: reference, relaxation_factor: factor },
        predictor: Default::default(),
        sim: SimConfig { seed, instances: chosen, migration: false, ..SimConfig::default() },
    }
}
