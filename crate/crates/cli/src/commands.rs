use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use goodput_core::estimator::write_samples_csv;
use goodput_core::experiments::{mixed_scenario, small_scenario};
use goodput_core::metrics::bench::{self, BenchConfig, OverheadReport};
use goodput_core::num::Real;
use goodput_core::predictor::{
    evaluate, save_model, train_moe, train_single_mlp, training_pairs, Evaluation, HistoryPredictor, LengthModel,
    LengthPredictor, PredictorKind,
};
use goodput_core::router::log::{write_decisions, write_migrations};
use goodput_core::router::PolicyKind;
use goodput_core::sim::config::load_dynamic;
use goodput_core::sim::{self, brute_force_optimal, OptimalAssignment, PredictorSpec, Scenario, SloSpec};
use goodput_core::workload::{write_trace, RequestSpec};
use goodput_core::{Error, Result};
use serde::Serialize;

use crate::manifest::{load_config, manifest_command, write_manifest, BenchSpec, EvalSpec, TrainSpec};
use crate::{BenchArgs, BruteArgs, EvalArgs, GenArgs, SimulateArgs, TrainArgs};

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn parse_policy(s: &str) -> Result<PolicyKind> {
    s.trim().parse()
}

/// The default scenario: the mixed agentic workload at twice solo latency.
fn default_scenario(seed: u64) -> Scenario {
    mixed_scenario(seed, 2.0, 400, 16.0)
}

fn load_scenario(config: Option<&Path>, command: &str, seed: Option<u64>, fallback: impl FnOnce(u64) -> Scenario) -> Result<Scenario> {
    let mut s = match config {
        Some(p) => load_config::<Scenario>(p, command)?,
        None => fallback(seed.unwrap_or(0)),
    };
    if let Some(seed) = seed {
        s.set_seed(seed);
    }
    Ok(s)
}

fn set_slo_scale(s: &mut Scenario, scale: f64) -> Result<()> {
    match &mut s.slo {
        SloSpec::Scaled { relaxation_factor, .. } => {
            *relaxation_factor = scale;
            Ok(())
        }
        _ => Err(Error::Config("--slo-scale needs a scenario whose deadlines are scaled from solo latency".into())),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut scenario = load_scenario(a.common.config.as_deref(), "simulate", a.common.seed, default_scenario)?;
    if let Some(k) = a.slo_scale {
        set_slo_scale(&mut scenario, k)?;
    }
    if let Some(p) = &a.predictor {
        scenario.predictor.kind = p.clone();
    }
    if let Some(c) = &a.checkpoint {
        scenario.predictor.checkpoint = Some(c.clone());
    }
    if a.no_migration {
        scenario.sim.migration = false;
    }
    if let Some(t) = a.tau {
        scenario.sim.risk.tau = t;
    }
    if a.measure_overhead {
        scenario.sim.measure_overhead = true;
    }
    let arms = match (&a.arms, &a.policy) {
        (Some(list), _) => list.split(',').filter(|s| !s.trim().is_empty()).map(parse_policy).collect::<Result<Vec<_>>>()?,
        (None, Some(p)) => vec![parse_policy(p)?],
        (None, None) => vec![scenario.sim.policy],
    };
    if arms.is_empty() {
        return Err(Error::Config("--arms lists no policies".into()));
    }
    scenario.validate()?;
    let trace = scenario.build_trace()?;
    fs::create_dir_all(&a.common.out)?;

    let mut rows = Vec::new();
    for &policy in &arms {
        let mut s = scenario.clone();
        s.sim.policy = policy;
        let dir = if a.arms.is_some() { a.common.out.join(policy.as_str()) } else { a.common.out.clone() };
        fs::create_dir_all(&dir)?;
        let summary = run_arm(&s, &trace, &dir)?;
        println!(
            "{:<16} goodput {:>8.3} req/s  within SLO {:>5}/{:<5}  violations {:.3}  migrations {}",
            policy.as_str(),
            summary.goodput_rps,
            summary.within_slo,
            summary.total,
            summary.violation_ratio,
            summary.migrations.count
        );
        rows.push(summary);
    }
    if a.arms.is_some() {
        let mut w = create(&a.common.out, "arms.csv")?;
        writeln!(w, "policy,goodput_rps,within_slo,total,violation_ratio,migrations")?;
        for r in &rows {
            writeln!(w, "{},{},{},{},{},{}", r.policy, r.goodput_rps, r.within_slo, r.total, r.violation_ratio, r.migrations.count)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn run_arm(s: &Scenario, trace: &[RequestSpec], dir: &Path) -> Result<goodput_core::metrics::Summary> {
    let mut predictor = s.predictor.build(s.sim.seed)?;
    let out = sim::run(trace, &s.sim, predictor.as_mut())?;
    let mut w = create(dir, "summary.json")?;
    out.report.write_summary(&mut w)?;
    w.flush()?;
    let mut w = create(dir, "report.json")?;
    out.report.write_json(&mut w)?;
    w.flush()?;
    let mut w = create(dir, "timeline.csv")?;
    out.report.write_timeline(&mut w)?;
    w.flush()?;
    let mut w = create(dir, "decisions.csv")?;
    write_decisions(&mut w, &out.decisions)?;
    w.flush()?;
    let mut w = create(dir, "migrations.csv")?;
    write_migrations(&mut w, &out.migrations)?;
    w.flush()?;
    write_json(dir, "instances.json", &out.instances)?;
    if s.sim.record_estimator {
        let mut w = create(dir, "estimator.csv")?;
        write_samples_csv(&mut w, &out.estimator_samples)?;
        w.flush()?;
    }
    write_manifest(dir, "simulate", s.sim.seed, s)?;
    Ok(out.report.summary)
}

pub fn gen_trace(a: &GenArgs) -> Result<()> {
    let mut s = load_scenario(a.common.config.as_deref(), "gen-trace", a.common.seed, default_scenario)?;
    if let Some(k) = a.slo_scale {
        set_slo_scale(&mut s, k)?;
    }
    s.validate()?;
    let trace = s.build_trace()?;
    fs::create_dir_all(&a.common.out)?;
    write_trace(a.common.out.join("trace.jsonl"), &trace)?;
    write_manifest(&a.common.out, "gen-trace", s.sim.seed, &s)?;
    println!("{} requests written to {}", trace.len(), a.common.out.join("trace.jsonl").display());
    Ok(())
}

/// Accuracy without wall-clock fields, so reruns compare byte for byte.
#[derive(Serialize)]
struct Accuracy {
    predictor: String,
    samples: usize,
    mae: f64,
    normalized_mae: f64,
}

impl From<&Evaluation> for Accuracy {
    fn from(e: &Evaluation) -> Self {
        Accuracy { predictor: e.predictor.clone(), samples: e.samples, mae: e.mae, normalized_mae: e.normalized_mae }
    }
}

#[derive(Serialize)]
struct Timing {
    predictor: String,
    batched_ms_per_request: f64,
}

impl From<&Evaluation> for Timing {
    fn from(e: &Evaluation) -> Self {
        Timing { predictor: e.predictor.clone(), batched_ms_per_request: e.batched_ms_per_request }
    }
}

#[derive(Serialize)]
struct TrainingReport {
    kind: String,
    scalar: String,
    experts: usize,
    parameters: usize,
    train_samples: usize,
    test_samples: usize,
    held_out: Vec<Accuracy>,
}

fn split(spec: &TrainSpec) -> Result<(Vec<RequestSpec>, Vec<RequestSpec>)> {
    let mut corpus = spec.corpus()?;
    let cut = spec.split_at(corpus.len());
    let test = corpus.split_off(cut);
    if corpus.is_empty() || test.is_empty() {
        return Err(Error::Config(format!("corpus of {} samples leaves an empty split", corpus.len() + test.len())));
    }
    Ok((corpus, test))
}

fn train_model<T: Real>(spec: &TrainSpec, train: &[RequestSpec]) -> Result<LengthModel<T>> {
    let pairs = training_pairs(train);
    Ok(if spec.kind == "moe" {
        LengthModel::Moe(train_moe(&pairs, &spec.train)?)
    } else {
        LengthModel::SingleMlp(train_single_mlp(&pairs, &spec.train)?)
    })
}

fn parameter_count<T: Real>(m: &LengthModel<T>) -> usize {
    match m {
        LengthModel::Moe(m) => m.parameter_count(),
        LengthModel::SingleMlp(m) => m.net.parameter_count(),
    }
}

/// Trains, saves `model.json` when `dir` is given, and scores the model on
/// the held-out split.
fn train_and_score<T: Real>(spec: &TrainSpec, dir: Option<&Path>) -> Result<(Box<dyn LengthPredictor>, Evaluation, TrainingReport, f64)>
where
    LengthModel<T>: LengthPredictor,
{
    let (train, test) = split(spec)?;
    let start = Instant::now();
    let mut model = train_model::<T>(spec, &train)?;
    let seconds = start.elapsed().as_secs_f64();
    if let Some(dir) = dir {
        save_model(dir.join("model.json"), &model)?;
    }
    let parameters = parameter_count(&model);
    let eval = evaluate(&mut model, &train, &test)?;
    let history = evaluate(&mut HistoryPredictor::default(), &train, &test)?;
    let report = TrainingReport {
        kind: spec.kind.clone(),
        scalar: T::TAG.into(),
        experts: if spec.kind == "moe" { spec.train.experts } else { 1 },
        parameters,
        train_samples: train.len(),
        test_samples: test.len(),
        held_out: vec![(&eval).into(), (&history).into()],
    };
    Ok((Box::new(model), eval, report, seconds))
}

fn train_dispatch(spec: &TrainSpec, dir: Option<&Path>) -> Result<(Box<dyn LengthPredictor>, Evaluation, TrainingReport, f64)> {
    match spec.scalar.as_str() {
        "f64" => train_and_score::<f64>(spec, dir),
        _ => train_and_score::<f32>(spec, dir),
    }
}

pub fn train_predictor(a: &TrainArgs) -> Result<()> {
    let mut spec = match &a.common.config {
        Some(p) => load_config::<TrainSpec>(p, "train-predictor")?,
        None => TrainSpec::preset(a.common.seed.unwrap_or(0)),
    };
    if let Some(seed) = a.common.seed {
        spec.set_seed(seed);
    }
    if let Some(k) = &a.predictor {
        spec.kind = k.clone();
    }
    if let Some(k) = a.experts {
        spec.train.experts = k;
    }
    if let Some(e) = a.epochs {
        spec.train.epochs = e;
        spec.train.gate_epochs = e;
    }
    spec.validate()?;
    fs::create_dir_all(&a.common.out)?;
    let (_, eval, report, seconds) = train_dispatch(&spec, Some(&a.common.out))?;
    write_json(&a.common.out, "training.json", &report)?;
    #[derive(Serialize)]
    struct TrainTiming {
        train_seconds: f64,
        batched_ms_per_request: f64,
    }
    write_json(
        &a.common.out,
        "timing.json",
        &TrainTiming { train_seconds: seconds, batched_ms_per_request: eval.batched_ms_per_request },
    )?;
    write_manifest(&a.common.out, "train-predictor", spec.train.seed, &spec)?;
    println!(
        "{} ({} parameters) trained in {seconds:.1}s: held-out MAE {:.1} (history {:.1}), {:.3} ms per request batched",
        report.kind, report.parameters, eval.mae, report.held_out[1].mae, eval.batched_ms_per_request
    );
    Ok(())
}

pub fn eval_predictor(a: &EvalArgs) -> Result<()> {
    let mut spec = match &a.common.config {
        None => EvalSpec { data: TrainSpec::preset(a.common.seed.unwrap_or(0)), checkpoint: None, baselines: vec![] },
        Some(p) => match manifest_command(p)?.as_deref() {
            Some("eval-predictor") => load_config::<EvalSpec>(p, "eval-predictor")?,
            Some("train-predictor") | None => {
                EvalSpec { data: load_config::<TrainSpec>(p, "train-predictor")?, checkpoint: None, baselines: vec![] }
            }
            Some(other) => return Err(Error::Config(format!("{} is a manifest of `{other}`", p.display()))),
        },
    };
    if let Some(seed) = a.common.seed {
        spec.data.set_seed(seed);
    }
    if let Some(c) = &a.checkpoint {
        spec.checkpoint = Some(c.clone());
    }
    if let Some(k) = &a.predictor {
        match k.parse::<PredictorKind>()? {
            PredictorKind::Moe | PredictorKind::SingleMlp => {
                return Err(Error::Config(format!("{k} is scored through --checkpoint")));
            }
            _ => spec.baselines.push(k.clone()),
        }
    }
    if !spec.baselines.iter().any(|b| b == "history") {
        spec.baselines.push("history".into());
    }
    spec.data.validate()?;
    let (train, test) = split(&spec.data)?;
    let mut scored: Vec<Evaluation> = Vec::new();
    if let Some(path) = &spec.checkpoint {
        let mut model = load_dynamic(path)?;
        scored.push(evaluate(model.as_mut(), &train, &test)?);
    }
    for b in &spec.baselines {
        let mut p = PredictorSpec { kind: b.clone(), ..PredictorSpec::default() }.build(spec.data.train.seed)?;
        scored.push(evaluate(p.as_mut(), &train, &test)?);
    }
    fs::create_dir_all(&a.common.out)?;
    write_json(&a.common.out, "eval.json", &scored.iter().map(Accuracy::from).collect::<Vec<_>>())?;
    write_json(&a.common.out, "timing.json", &scored.iter().map(Timing::from).collect::<Vec<_>>())?;
    write_manifest(&a.common.out, "eval-predictor", spec.data.train.seed, &spec)?;
    for e in &scored {
        println!("{:<12} MAE {:>8.2}  normalized {:.3}  {:.4} ms/request", e.predictor, e.mae, e.normalized_mae, e.batched_ms_per_request);
    }
    Ok(())
}

pub fn bench_overhead(a: &BenchArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(0);
    let mut spec = match &a.config {
        Some(p) => load_config::<BenchSpec>(p, "bench-overhead")?,
        None => {
            let instances = a
                .instances
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad instance count {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            let mut training = TrainSpec::preset(seed);
            if let Some(k) = a.experts {
                training.train.experts = k;
            }
            BenchSpec {
                instances,
                rps: a.rps,
                decisions: a.decisions,
                max_batch: a.max_batch,
                predictor: a.predictor.clone(),
                checkpoint: a.checkpoint.clone(),
                training,
            }
        }
    };
    if let Some(seed) = a.seed {
        spec.training.set_seed(seed);
    }
    if spec.instances.is_empty() || spec.instances.contains(&0) {
        return Err(Error::Config("instance counts must be >= 1".into()));
    }
    spec.training.validate()?;
    let kind: PredictorKind = spec.predictor.parse()?;
    let (_, prompts) = split(&spec.training)?;
    let mut predictor: Box<dyn LengthPredictor> = match (&spec.checkpoint, kind) {
        (Some(path), _) => load_dynamic(path)?,
        (None, PredictorKind::Moe | PredictorKind::SingleMlp) => {
            spec.training.kind = kind.to_string();
            log::warn!("no checkpoint given; training a {kind} model first");
            train_dispatch(&spec.training, None)?.0
        }
        (None, _) => PredictorSpec { kind: spec.predictor.clone(), ..PredictorSpec::default() }.build(seed)?,
    };
    let mut reports: Vec<OverheadReport> = Vec::new();
    for &m in &spec.instances {
        let cfg = BenchConfig { instances: m, rps: spec.rps, decisions: spec.decisions, max_batch: spec.max_batch, seed };
        let r = bench::bench_overhead(&cfg, &prompts, predictor.as_mut())?;
        println!(
            "M {:>5}: latency mean {:>9.1} us  p95 {:>9.1}  max {:>9.1}  compute {:>7.1} us/decision  router busy {:.2}",
            m, r.latency_us.mean, r.latency_us.p95, r.latency_us.max, r.processing_us.mean, r.utilization
        );
        reports.push(r);
    }
    fs::create_dir_all(&a.out)?;
    write_json(&a.out, "overhead.json", &reports)?;
    let mut w = create(&a.out, "overhead.csv")?;
    writeln!(w, "instances,rps,decisions,batches,latency_mean_us,latency_p50_us,latency_p95_us,latency_max_us,compute_mean_us,utilization")?;
    for r in &reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.instances, r.rps, r.decisions, r.batches, r.latency_us.mean, r.latency_us.p50, r.latency_us.p95, r.latency_us.max,
            r.processing_us.mean, r.utilization
        )?;
    }
    w.flush()?;
    write_manifest(&a.out, "bench-overhead", seed, &spec)?;
    Ok(())
}

#[derive(Serialize)]
struct BruteReport {
    requests: usize,
    instances: usize,
    optimal: OptimalAssignment,
    heuristic_policy: String,
    heuristic_within_slo: usize,
    heuristic_assignment: Vec<usize>,
    /// Heuristic within-SLO count over the optimum's, 1 when both are 0.
    ratio: f64,
}

pub fn brute_force(a: &BruteArgs) -> Result<()> {
    let (requests, instances) = (a.requests, a.instances);
    let s = load_scenario(a.common.config.as_deref(), "brute-force", a.common.seed, |seed| {
        small_scenario(seed, requests, instances)
    })?;
    let policy = parse_policy(&a.policy)?;
    s.validate()?;
    let trace = s.build_trace()?;
    let optimal = brute_force_optimal(&trace, &s.sim)?;
    let mut heuristic = s.sim.clone();
    heuristic.policy = policy;
    heuristic.migration = false;
    let mut predictor = s.predictor.build(s.sim.seed)?;
    let out = sim::run(&trace, &heuristic, predictor.as_mut())?;
    let got = out.report.summary.within_slo;
    let mut assignment = vec![0; trace.len()];
    let index: std::collections::HashMap<u64, usize> = trace.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
    for d in &out.decisions {
        if let Some(&i) = index.get(&d.request_id) {
            assignment[i] = d.chosen_instance;
        }
    }
    let report = BruteReport {
        requests: trace.len(),
        instances: s.sim.instances.len(),
        heuristic_policy: policy.to_string(),
        heuristic_within_slo: got,
        heuristic_assignment: assignment,
        ratio: if optimal.within_slo == 0 { 1.0 } else { got as f64 / optimal.within_slo as f64 },
        optimal,
    };
    fs::create_dir_all(&a.common.out)?;
    write_json(&a.common.out, "optimal.json", &report)?;
    write_manifest(&a.common.out, "brute-force", s.sim.seed, &s)?;
    println!(
        "optimum {}/{} within SLO over {} assignments; {} reaches {} (ratio {:.3})",
        report.optimal.within_slo, report.requests, report.optimal.assignments_evaluated, report.heuristic_policy, got, report.ratio
    );
    Ok(())
}
