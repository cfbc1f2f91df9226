//! Discrete-event engine for a cluster of continuous-batching instances.
//!
//! Time is in milliseconds. Every event carries a sequence number, so events
//! at equal times run in the order they were scheduled.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::GpuProfile;
use crate::error::{Error, Result};
use crate::estimator::{block_hashes, ChannelKind, Estimator, EstimatorSample, PrefixCacheIndex};
use crate::metrics::{MetricsReport, MigrationStats, RequestRecord};
use crate::predictor::LengthPredictor;
use crate::router::log::{DecisionLogRow, MigrationLogRow};
use crate::router::{
    check_risk, migration_cost, transfer_ms, ActiveRequest, InstanceView, MigrationAction,
    MigrationMode, MigrationModel, PolicyKind, Router,
};
use crate::workload::RequestSpec;

#[derive(Clone, Copy, Debug, PartialEq)]
enum EventKind {
    Arrival(usize),
    IterationDone(usize),
    MigrationArrive { job: usize, dst: usize },
    RiskCheck(usize),
    /// Starts an idle instance once every event at this instant has run.
    Wake(usize),
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Phase {
    Pending,
    Queued { since: f64 },
    Running,
    InTransit(MigrationMode),
    Done,
    Rejected,
}

#[derive(Clone, Debug)]
struct Job {
    spec: usize,
    phase: Phase,
    instance: usize,
    generated: u32,
    /// Tokens reserved on `instance`.
    reserved: u64,
    decode_since: f64,
    landed_at_iteration: Option<u64>,
    hashes: Vec<u64>,
    record: RequestRecord,
}

#[derive(Clone, Debug)]
struct Inst {
    profile: GpuProfile,
    waiting: VecDeque<usize>,
    running: Vec<usize>,
    /// KV migrations that arrived and join at the next boundary.
    joining: Vec<usize>,
    /// Jobs in transit towards this instance.
    inbound: usize,
    /// Of those, KV moves already holding a reservation here.
    inbound_kv: usize,
    used_tokens: u64,
    busy: bool,
    hold: bool,
    wake_pending: bool,
    step_start: f64,
    step_end: f64,
    iterations: u64,
    cache: PrefixCacheIndex,
    tpm: VecDeque<(f64, u64)>,
    tpm_sum: u64,
    stats: InstanceStats,
}

/// Per-instance counters, for capacity checks and estimator comparisons.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub name: String,
    pub iterations: u64,
    pub peak_batch: usize,
    pub peak_tokens: u64,
    pub busy_ms: f64,
    pub tokens_generated: u64,
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub report: MetricsReport,
    pub decisions: Vec<DecisionLogRow>,
    pub migrations: Vec<MigrationLogRow>,
    pub estimator_samples: Vec<EstimatorSample>,
    pub instances: Vec<InstanceStats>,
    pub events_processed: u64,
}

enum Placement {
    Policy(Router),
    Fixed(Vec<usize>),
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    trace: &'a [RequestSpec],
    predictor: &'a mut dyn LengthPredictor,
    placement: Placement,
    link: MigrationModel,
    jobs: Vec<Job>,
    insts: Vec<Inst>,
    estimator: Estimator<f64>,
    heap: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    decisions: Vec<DecisionLogRow>,
    migrations: Vec<MigrationLogRow>,
    aborted: usize,
    decision_us: Vec<f64>,
    min_memory: u64,
}

/// Runs `trace` under the configured policy.
pub fn run(trace: &[RequestSpec], cfg: &SimConfig, predictor: &mut dyn LengthPredictor) -> Result<SimOutput> {
    let mut router = Router::new(cfg.policy, cfg.seed);
    router.affinity_lambda = cfg.affinity_lambda;
    Engine::new(trace, cfg, predictor, Placement::Policy(router))?.run()
}

/// Runs `trace` with request `i` pinned to instance `assignment[i]`, with
/// true lengths and no migration.
pub fn run_assigned(trace: &[RequestSpec], cfg: &SimConfig, assignment: &[usize]) -> Result<SimOutput> {
    if assignment.len() != trace.len() {
        return Err(Error::Validation(format!(
            "assignment has {} entries for {} requests",
            assignment.len(),
            trace.len()
        )));
    }
    if let Some(&g) = assignment.iter().find(|&&g| g >= cfg.instances.len()) {
        return Err(Error::Validation(format!("assignment names unknown instance {g}")));
    }
    let cfg = SimConfig { migration: false, ..cfg.clone() };
    let mut oracle = crate::predictor::OraclePredictor;
    Engine::new(trace, &cfg, &mut oracle, Placement::Fixed(assignment.to_vec()))?.run()
}

impl<'a> Engine<'a> {
    fn new(
        trace: &'a [RequestSpec],
        cfg: &'a SimConfig,
        predictor: &'a mut dyn LengthPredictor,
        placement: Placement,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut seen = std::collections::HashSet::new();
        for r in trace {
            if !seen.insert(r.id) {
                return Err(Error::Validation(format!("duplicate request id {}", r.id)));
            }
            if r.input_length == 0 || r.output_length == 0 {
                return Err(Error::Validation(format!("request {} has a zero length", r.id)));
            }
            if !(r.deadline() > 0.0) {
                return Err(Error::Validation(format!("request {} has a non-positive deadline", r.id)));
            }
        }
        let seeds: Vec<(f64, f64)> = cfg.instances.iter().map(|p| (p.prefill_ms_per_token, p.iter_ms(1))).collect();
        let insts = cfg
            .instances
            .iter()
            .map(|p| Inst {
                profile: p.clone(),
                waiting: VecDeque::new(),
                running: Vec::new(),
                joining: Vec::new(),
                inbound: 0,
                inbound_kv: 0,
                used_tokens: 0,
                busy: false,
                hold: false,
                wake_pending: false,
                step_start: 0.0,
                step_end: 0.0,
                iterations: 0,
                cache: PrefixCacheIndex::new(cfg.prefix_cache),
                tpm: VecDeque::new(),
                tpm_sum: 0,
                stats: InstanceStats { name: p.name.clone(), ..InstanceStats::default() },
            })
            .collect();
        let jobs = trace
            .iter()
            .enumerate()
            .map(|(i, r)| Job {
                spec: i,
                phase: Phase::Pending,
                instance: usize::MAX,
                generated: 0,
                reserved: 0,
                decode_since: 0.0,
                landed_at_iteration: None,
                hashes: block_hashes(r.tokens(), cfg.prefix_cache.block_size),
                record: RequestRecord {
                    request_id: r.id,
                    arrival_ms: r.arrival_ms,
                    deadline_ms: r.deadline(),
                    input_length: r.input_length,
                    output_length: r.output_length,
                    predicted_output: None,
                    instance_path: Vec::new(),
                    queue_ms: 0.0,
                    prefill_ms: 0.0,
                    decode_ms: 0.0,
                    transfer_ms: 0.0,
                    migrations: 0,
                    first_token_ms: None,
                    completion_ms: None,
                    generated: 0,
                    within_slo: false,
                    error: None,
                },
            })
            .collect();
        Ok(Engine {
            cfg,
            trace,
            predictor,
            placement,
            link: MigrationModel {
                mode: cfg.migration_mode,
                model: cfg.model.clone(),
                bandwidth_bps: cfg.link_bandwidth_bps,
            },
            jobs,
            insts,
            estimator: Estimator::new(cfg.ema, &seeds, cfg.record_estimator),
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            decisions: Vec::new(),
            migrations: Vec::new(),
            aborted: 0,
            decision_us: Vec::new(),
            min_memory: cfg.instances.iter().map(|p| p.memory_tokens).min().unwrap_or(0),
        })
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.heap.push(Event { time, seq: self.seq, kind });
    }

    fn wake(&mut self, g: usize) {
        let inst = &mut self.insts[g];
        if !inst.busy && !inst.hold && !inst.wake_pending {
            inst.wake_pending = true;
            self.schedule(self.now, EventKind::Wake(g));
        }
    }

    fn rechecks(&self) -> bool {
        self.cfg.migration
            && matches!(&self.placement, Placement::Policy(r) if r.policy.is_slo_aware())
    }

    fn run(mut self) -> Result<SimOutput> {
        for i in 0..self.trace.len() {
            self.schedule(self.trace[i].arrival_ms, EventKind::Arrival(i));
        }
        let mut processed = 0u64;
        while let Some(ev) = self.heap.pop() {
            if ev.time < self.now {
                return Err(Error::Validation(format!("clock moved backwards: {} < {}", ev.time, self.now)));
            }
            self.now = ev.time;
            processed += 1;
            match ev.kind {
                EventKind::Arrival(j) => self.on_arrival(j)?,
                EventKind::IterationDone(g) => self.on_iteration_done(g),
                EventKind::MigrationArrive { job, dst } => self.on_migration_arrive(job, dst),
                EventKind::RiskCheck(g) => self.on_risk_check(g),
                EventKind::Wake(g) => {
                    self.insts[g].wake_pending = false;
                    self.try_start(g);
                }
            }
        }
        self.finish(processed)
    }

    fn finish(self, processed: u64) -> Result<SimOutput> {
        let mut records = Vec::with_capacity(self.jobs.len());
        for job in &self.jobs {
            match job.phase {
                Phase::Done => {
                    if job.generated != self.trace[job.spec].output_length {
                        return Err(Error::Validation(format!("request {} finished early", job.record.request_id)));
                    }
                }
                Phase::Rejected => {}
                other => {
                    return Err(Error::Validation(format!(
                        "request {} left in state {other:?}",
                        job.record.request_id
                    )))
                }
            }
            records.push(job.record.clone());
        }
        let cost_sum: f64 = self.migrations.iter().map(|m| m.cost_ms).sum();
        let stats = MigrationStats {
            count: self.migrations.len(),
            aborted: self.aborted,
            mean_cost_ms: if self.migrations.is_empty() { 0.0 } else { cost_sum / self.migrations.len() as f64 },
        };
        let policy = match &self.placement {
            Placement::Policy(r) => r.policy.as_str().to_string(),
            Placement::Fixed(_) => "fixed".to_string(),
        };
        let timed = self.cfg.measure_overhead.then_some(self.decision_us.as_slice());
        let report = MetricsReport::build(&policy, &self.predictor.name(), records, timed, stats)?;
        let mut estimator = self.estimator;
        Ok(SimOutput {
            report,
            decisions: self.decisions,
            migrations: self.migrations,
            estimator_samples: estimator.take_samples(),
            instances: self.insts.into_iter().map(|i| i.stats).collect(),
            events_processed: processed,
        })
    }

    fn reservation(&self, j: usize) -> u64 {
        let r = &self.trace[self.jobs[j].spec];
        r.input_length as u64 + r.output_length as u64
    }

    fn prune_tpm(&mut self, g: usize) {
        let cutoff = self.now - self.cfg.tpm_window_ms;
        let inst = &mut self.insts[g];
        while let Some(&(t, n)) = inst.tpm.front() {
            if t >= cutoff {
                break;
            }
            inst.tpm.pop_front();
            inst.tpm_sum -= n;
        }
    }

    fn add_tpm(&mut self, g: usize, tokens: u64) {
        let now = self.now;
        let inst = &mut self.insts[g];
        inst.tpm.push_back((now, tokens));
        inst.tpm_sum += tokens;
    }

    fn views(&mut self, j: usize) -> Vec<InstanceView> {
        (0..self.insts.len())
            .map(|g| {
                self.prune_tpm(g);
                let inst = &self.insts[g];
                let est = self.estimator.get(g);
                InstanceView {
                    q_ms: est.q(),
                    p_ms: est.p(),
                    d_ms: est.d(),
                    pending: inst.waiting.len() + inst.running.len() + inst.joining.len() + inst.inbound,
                    hit_tokens: inst.cache.hit_tokens(&self.jobs[j].hashes) as u32,
                    recent_tokens: inst.tpm_sum,
                    free_tokens: inst.profile.memory_tokens.saturating_sub(inst.used_tokens),
                    max_batch: inst.profile.max_batch,
                }
            })
            .collect()
    }

    /// What-if rates for job `j` on instance `g`, from the instance's true
    /// backlog with true lengths and no further arrivals.
    fn project(&self, g: usize, j: usize) -> (f64, f64, f64) {
        let inst = &self.insts[g];
        let p = &inst.profile;
        let remaining = |k: usize| self.trace[self.jobs[k].spec].output_length - self.jobs[k].generated;
        let mut t = if inst.busy { inst.step_end } else { self.now };
        let mut used = inst.used_tokens;
        // (remaining tokens, reservation, is target)
        let mut running: Vec<(u32, u64, bool)> = Vec::with_capacity(p.max_batch);
        for &k in inst.running.iter().chain(&inst.joining) {
            let left = remaining(k) - u32::from(inst.busy && inst.running.contains(&k));
            if left == 0 {
                used -= self.jobs[k].reserved;
            } else {
                running.push((left, self.jobs[k].reserved, false));
            }
        }
        let mut queue: VecDeque<(u64, u64, u32, bool)> = inst
            .waiting
            .iter()
            .map(|&k| {
                let job = &self.jobs[k];
                let ctx = self.trace[job.spec].input_length as u64 + job.generated as u64;
                let miss = ctx - (inst.cache.hit_tokens(&job.hashes) as u64).min(ctx);
                (miss, self.reservation(k), remaining(k), false)
            })
            .collect();
        let spec = &self.trace[self.jobs[j].spec];
        let hit = inst.cache.hit_tokens(&self.jobs[j].hashes) as u64;
        queue.push_back((spec.input_length as u64 - hit.min(spec.input_length as u64), self.reservation(j), spec.output_length, true));
        // Reserved KV moves still in flight.
        used = used.min(p.memory_tokens);
        let mut admit_start = None;
        let mut prefill = 0.0;
        loop {
            while let Some(&(miss, need, left, target)) = queue.front() {
                if running.len() >= p.max_batch || used + need > p.memory_tokens {
                    break;
                }
                queue.pop_front();
                if target {
                    admit_start = Some(t);
                    prefill = miss as f64 * p.prefill_ms_per_token;
                }
                t += miss as f64 * p.prefill_ms_per_token;
                used += need;
                running.push((left, need, target));
            }
            if running.is_empty() {
                // Cannot happen for admissible requests; treat as unbounded.
                return (f64::INFINITY, p.prefill_ms_per_token, p.iter_ms(1));
            }
            let k = running.iter().map(|r| r.0).min().unwrap();
            t += k as f64 * p.iter_ms(running.len());
            let mut done_target = false;
            running.retain_mut(|r| {
                r.0 -= k;
                if r.0 == 0 {
                    used -= r.1;
                    done_target |= r.2;
                    false
                } else {
                    true
                }
            });
            if done_target {
                let start = admit_start.expect("target admitted before finishing");
                let d = (t - start - prefill) / spec.output_length as f64;
                return ((start - self.now).max(0.0), p.prefill_ms_per_token, d);
            }
        }
    }

    fn on_arrival(&mut self, j: usize) -> Result<()> {
        let trace = self.trace;
        let spec = &trace[self.jobs[j].spec];
        let need = self.reservation(j);
        if need > self.min_memory {
            let (g, budget) = self
                .insts
                .iter()
                .enumerate()
                .map(|(g, i)| (g, i.profile.memory_tokens))
                .find(|&(_, m)| need > m)
                .unwrap();
            let job = &mut self.jobs[j];
            job.phase = Phase::Rejected;
            job.record.error = Some(format!(
                "context of {need} tokens exceeds the memory budget of instance {g} ({budget} tokens)"
            ));
            log::warn!("request {} rejected: {}", spec.id, job.record.error.as_deref().unwrap());
            return Ok(());
        }
        let started = self.cfg.measure_overhead.then(Instant::now);
        let (g, estimate, feasible, predicted, policy) = match &self.placement {
            Placement::Fixed(a) => (a[j], f64::NAN, true, spec.output_length, "fixed"),
            Placement::Policy(r) => {
                let policy = r.policy;
                let predicted = if policy == PolicyKind::Oracle {
                    spec.output_length
                } else {
                    self.predictor.predict_remaining(spec, 0)
                };
                let mut views = self.views(j);
                if policy == PolicyKind::Oracle {
                    for (g, v) in views.iter_mut().enumerate() {
                        let (q, p, d) = self.project(g, j);
                        v.q_ms = q;
                        v.p_ms = p;
                        v.d_ms = d;
                    }
                }
                let Placement::Policy(router) = &mut self.placement else { unreachable!() };
                let decision = router.select(spec, predicted, &views)?;
                let chosen = decision.chosen;
                (chosen, decision.estimated_ms[chosen], decision.feasible, predicted, policy.as_str())
            }
        };
        let elapsed = started.map(|s| s.elapsed().as_secs_f64() * 1e6);
        if let Some(us) = elapsed {
            self.decision_us.push(us);
        }
        if !matches!(self.placement, Placement::Fixed(_)) {
            self.decisions.push(DecisionLogRow {
                request_id: spec.id,
                arrival_ms: spec.arrival_ms,
                policy: policy.to_string(),
                chosen_instance: g,
                feasible,
                estimated_t_ms: estimate,
                decision_latency_us: elapsed,
            });
        }
        let now = self.now;
        let job = &mut self.jobs[j];
        job.record.predicted_output = Some(predicted);
        job.record.instance_path.push(g);
        job.instance = g;
        job.phase = Phase::Queued { since: now };
        self.insts[g].waiting.push_back(j);
        self.wake(g);
        Ok(())
    }

    /// Starts the next step on `g` if it is idle: admit from the queue,
    /// charge their prefill, then one decode iteration over the batch.
    fn try_start(&mut self, g: usize) {
        let trace = self.trace;
        if self.insts[g].busy || self.insts[g].hold {
            return;
        }
        let joined = std::mem::take(&mut self.insts[g].joining);
        self.insts[g].running.extend(joined);
        let mut t = self.now;
        let mut prefill_tokens = 0u64;
        let (rate, max_batch, memory) = {
            let p = &self.insts[g].profile;
            (p.prefill_ms_per_token, p.max_batch, p.memory_tokens)
        };
        while let Some(&j) = self.insts[g].waiting.front() {
            let need = self.reservation(j);
            let inst = &self.insts[g];
            if inst.running.len() + inst.inbound_kv >= max_batch || inst.used_tokens + need > memory {
                break;
            }
            self.insts[g].waiting.pop_front();
            let Phase::Queued { since } = self.jobs[j].phase else { unreachable!("queued job") };
            self.estimator.observe(g, ChannelKind::QueueWait, self.now - since, self.now);
            let spec = &trace[self.jobs[j].spec];
            let ctx = spec.input_length as u64 + self.jobs[j].generated as u64;
            let hit = (self.insts[g].cache.hit_tokens(&self.jobs[j].hashes) as u64).min(ctx);
            let miss = ctx - hit;
            let prefill = miss as f64 * rate;
            if miss > 0 {
                self.estimator.observe(g, ChannelKind::PrefillPerToken, prefill / miss as f64, self.now);
            }
            let hashes = std::mem::take(&mut self.jobs[j].hashes);
            self.insts[g].cache.record(&hashes);
            let job = &mut self.jobs[j];
            job.hashes = hashes;
            job.record.queue_ms += self.now - since;
            job.record.prefill_ms += prefill;
            t += prefill;
            job.decode_since = t;
            job.phase = Phase::Running;
            job.reserved = need;
            prefill_tokens += miss;
            let inst = &mut self.insts[g];
            inst.used_tokens += need;
            inst.running.push(j);
        }
        if prefill_tokens > 0 {
            self.add_tpm(g, prefill_tokens);
        }
        let inst = &mut self.insts[g];
        if inst.running.is_empty() {
            return;
        }
        let end = t + inst.profile.iter_ms(inst.running.len());
        inst.busy = true;
        inst.step_start = self.now;
        inst.step_end = end;
        inst.stats.peak_batch = inst.stats.peak_batch.max(inst.running.len());
        inst.stats.peak_tokens = inst.stats.peak_tokens.max(inst.used_tokens);
        debug_assert!(inst.running.len() <= inst.profile.max_batch);
        debug_assert!(inst.used_tokens <= inst.profile.memory_tokens);
        self.schedule(end, EventKind::IterationDone(g));
    }

    fn on_iteration_done(&mut self, g: usize) {
        let trace = self.trace;
        let now = self.now;
        let step = now - self.insts[g].step_start;
        self.estimator.observe(g, ChannelKind::DecodePerToken, step, now);
        let batch = std::mem::take(&mut self.insts[g].running);
        let tokens = batch.len() as u64;
        let mut still = Vec::with_capacity(batch.len());
        for j in batch {
            let out = trace[self.jobs[j].spec].output_length;
            let job = &mut self.jobs[j];
            job.generated += 1;
            job.record.generated = job.generated;
            if job.record.first_token_ms.is_none() {
                job.record.first_token_ms = Some(now);
            }
            if job.generated == out {
                job.phase = Phase::Done;
                job.record.decode_ms += now - job.decode_since;
                job.record.completion_ms = Some(now);
                job.record.within_slo = job.record.meets_deadline();
                self.insts[g].used_tokens -= job.reserved;
                job.reserved = 0;
                self.predictor.observe_completion(&trace[job.spec]);
            } else {
                still.push(j);
            }
        }
        let inst = &mut self.insts[g];
        inst.stats.tokens_generated += tokens;
        inst.running = still;
        inst.busy = false;
        inst.iterations += 1;
        inst.stats.iterations = inst.iterations;
        inst.stats.busy_ms += step;
        let iterations = inst.iterations;
        self.add_tpm(g, tokens);
        if self.rechecks() && iterations % self.cfg.risk.tau as u64 == 0 {
            self.insts[g].hold = true;
            self.schedule(now, EventKind::RiskCheck(g));
        } else {
            self.try_start(g);
        }
    }

    fn on_risk_check(&mut self, g: usize) {
        let trace = self.trace;
        self.insts[g].hold = false;
        let oracle = matches!(&self.placement, Placement::Policy(r) if r.policy == PolicyKind::Oracle);
        let members: Vec<usize> = self.insts[g].running.iter().chain(self.insts[g].waiting.iter()).copied().collect();
        let mut active = Vec::with_capacity(members.len());
        let mut by_id = HashMap::with_capacity(members.len());
        for &j in &members {
            let job = &self.jobs[j];
            let spec = &trace[job.spec];
            let predicted_remaining = if oracle {
                spec.output_length - job.generated
            } else {
                self.predictor.predict_remaining(spec, job.generated)
            };
            let (queued, waited) = match job.phase {
                Phase::Queued { since } => (true, self.now - since),
                _ => (false, 0.0),
            };
            by_id.insert(spec.id, j);
            active.push(ActiveRequest {
                request_id: spec.id,
                arrival_ms: spec.arrival_ms,
                deadline_ms: spec.deadline(),
                input_length: spec.input_length,
                generated: job.generated,
                predicted_remaining,
                queued,
                waited_ms: waited,
                source_hit: self.insts[g].cache.hit_tokens(&job.hashes) as u32,
                migrations: job.record.migrations,
                iterations_since_migration: job.landed_at_iteration.map(|n| self.insts[g].iterations - n),
            });
        }
        let views: Vec<InstanceView> = if let Some(&first) = members.first() {
            self.views(first)
        } else {
            Vec::new()
        };
        let actions = if active.is_empty() {
            Vec::new()
        } else {
            let insts = &self.insts;
            let jobs = &self.jobs;
            check_risk(g, &active, self.now, &views, &self.cfg.risk, &self.link, |r, dst| {
                insts[dst].cache.hit_tokens(&jobs[by_id[&r.request_id]].hashes) as u32
            })
        };
        for action in actions {
            let j = by_id[&action.request_id];
            self.apply_migration(j, &action);
        }
        self.try_start(g);
    }

    fn apply_migration(&mut self, j: usize, action: &MigrationAction) {
        let (src, dst) = (action.source, action.destination);
        let need = self.reservation(j);
        if action.mode == MigrationMode::KvCache {
            let d = &self.insts[dst];
            let slots = d.running.len() + d.joining.len() + d.inbound_kv;
            if slots >= d.profile.max_batch || d.used_tokens + need > d.profile.memory_tokens {
                self.aborted += 1;
                log::info!("migration of request {} to instance {dst} aborted: destination full", action.request_id);
                return;
            }
        }
        let now = self.now;
        let job = &mut self.jobs[j];
        match job.phase {
            Phase::Running => {
                self.insts[src].running.retain(|&k| k != j);
                self.insts[src].used_tokens -= job.reserved;
                job.reserved = 0;
                job.record.decode_ms += now - job.decode_since;
            }
            Phase::Queued { since } => {
                self.insts[src].waiting.retain(|&k| k != j);
                job.record.queue_ms += now - since;
            }
            other => unreachable!("migrating job in state {other:?}"),
        }
        let bytes_per_token = match action.mode {
            MigrationMode::TokenIds => self.cfg.model.id_bytes,
            MigrationMode::KvCache => self.cfg.model.kv_bytes_per_token,
        };
        let transfer = transfer_ms(action.tokens_to_transfer * bytes_per_token, self.cfg.link_bandwidth_bps);
        let dst_hit = self.insts[dst].cache.hit_tokens(&job.hashes) as u64;
        let cost = migration_cost(
            action.mode,
            action.tokens_to_transfer,
            dst_hit,
            self.insts[dst].profile.prefill_ms_per_token,
            &self.cfg.model,
            self.cfg.link_bandwidth_bps,
        );
        job.record.transfer_ms += transfer;
        job.record.migrations += 1;
        job.phase = Phase::InTransit(action.mode);
        job.instance = dst;
        let d = &mut self.insts[dst];
        d.inbound += 1;
        if action.mode == MigrationMode::KvCache {
            d.inbound_kv += 1;
            d.used_tokens += need;
            job.reserved = need;
        }
        self.migrations.push(MigrationLogRow {
            request_id: action.request_id,
            time_ms: now,
            src,
            dst,
            mode: action.mode.as_str().to_string(),
            tokens: action.tokens_to_transfer,
            cost_ms: cost.total_ms(),
        });
        self.schedule(now + transfer, EventKind::MigrationArrive { job: j, dst });
    }

    fn on_migration_arrive(&mut self, j: usize, dst: usize) {
        let now = self.now;
        let iterations = self.insts[dst].iterations;
        let job = &mut self.jobs[j];
        job.record.instance_path.push(dst);
        job.landed_at_iteration = Some(iterations);
        let inst = &mut self.insts[dst];
        inst.inbound -= 1;
        match job.phase {
            Phase::InTransit(MigrationMode::TokenIds) => {
                job.phase = Phase::Queued { since: now };
                inst.waiting.push_back(j);
            }
            Phase::InTransit(MigrationMode::KvCache) => {
                inst.inbound_kv -= 1;
                job.phase = Phase::Running;
                job.decode_since = now;
                inst.joining.push(j);
            }
            other => unreachable!("arrival of job in state {other:?}"),
        }
        self.wake(dst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::mixed_scenario;
    use crate::predictor::{NoisyOracle, OraclePredictor};
    use crate::router::RiskCheckConfig;
    use proptest::prelude::*;

    fn req(id: u64, arrival_ms: f64, input: u32, output: u32, deadline_ms: f64) -> RequestSpec {
        let prompt = (0..input).map(|k| format!("r{id}t{k}")).collect::<Vec<_>>().join(" ");
        RequestSpec {
            id,
            arrival_ms,
            prompt,
            input_length: input,
            output_length: output,
            task_type: "t".into(),
            deadline_ms: Some(deadline_ms),
        }
    }

    fn profile(name: &str, base_ms: f64, slope_ms: f64, prefill: f64) -> GpuProfile {
        GpuProfile {
            name: name.into(),
            base_ms,
            slope_ms,
            prefill_ms_per_token: prefill,
            memory_tokens: 10_000,
            max_batch: 8,
        }
    }

    fn single(p: GpuProfile) -> SimConfig {
        SimConfig { instances: vec![p], policy: PolicyKind::RoundRobin, migration: false, ..SimConfig::default() }
    }

    fn completion(out: &SimOutput, id: u64) -> f64 {
        out.report.records.iter().find(|r| r.request_id == id).unwrap().completion_ms.unwrap()
    }

    #[test]
    fn single_request_closed_form() {
        let cfg = single(profile("a", 10.0, 1.0, 0.5));
        let trace = [req(1, 5.0, 100, 20, 1e6)];
        let out = run(&trace, &cfg, &mut OraclePredictor).unwrap();
        let r = &out.report.records[0];
        assert_eq!(r.completion_ms, Some(5.0 + 100.0 * 0.5 + 20.0 * 11.0));
        assert_eq!(r.first_token_ms, Some(5.0 + 50.0 + 11.0));
        assert_eq!(r.prefill_ms, 50.0);
        assert_eq!(r.queue_ms, 0.0);
        assert!(r.within_slo);
    }

    #[test]
    fn two_requests_share_a_batch() {
        let mut p = profile("a", 10.0, 1.0, 1.0);
        p.max_batch = 2;
        let trace = [req(1, 0.0, 10, 5, 1e6), req(2, 0.0, 10, 5, 1e6)];
        let out = run(&trace, &single(p), &mut OraclePredictor).unwrap();
        // Both prefill (20 ms) before the first iteration at iter_ms(2).
        assert_eq!(completion(&out, 1), 20.0 + 5.0 * 12.0);
        assert_eq!(completion(&out, 2), 20.0 + 5.0 * 12.0);
        assert_eq!(out.instances[0].peak_batch, 2);
    }

    #[test]
    fn finished_request_frees_its_slot() {
        let mut p = profile("a", 10.0, 0.0, 0.0);
        p.max_batch = 1;
        let trace = [req(1, 0.0, 1, 3, 1e6), req(2, 0.0, 1, 2, 1e6)];
        let out = run(&trace, &single(p), &mut OraclePredictor).unwrap();
        assert_eq!(completion(&out, 1), 30.0);
        assert_eq!(completion(&out, 2), 50.0);
        let r2 = out.report.records.iter().find(|r| r.request_id == 2).unwrap();
        assert_eq!(r2.queue_ms, 30.0);
    }

    #[test]
    fn oversize_request_is_rejected_with_a_record() {
        let mut small = profile("b", 10.0, 0.0, 0.0);
        small.memory_tokens = 100;
        let cfg = SimConfig {
            instances: vec![profile("a", 10.0, 0.0, 0.0), small],
            policy: PolicyKind::LeastRequest,
            ..SimConfig::default()
        };
        let trace = [req(1, 0.0, 80, 30, 1e6), req(2, 1.0, 10, 10, 1e6)];
        let out = run(&trace, &cfg, &mut OraclePredictor).unwrap();
        let r1 = &out.report.records[0];
        assert!(r1.error.as_deref().unwrap().contains("instance 1"));
        assert!(r1.completion_ms.is_none() && !r1.within_slo);
        assert_eq!(out.report.summary.rejected, 1);
        assert_eq!(out.report.summary.within_slo, 1);
    }

    #[test]
    fn invalid_traces_are_refused() {
        let cfg = single(profile("a", 10.0, 0.0, 0.0));
        let dup = [req(1, 0.0, 1, 1, 10.0), req(1, 1.0, 1, 1, 10.0)];
        assert!(matches!(run(&dup, &cfg, &mut OraclePredictor), Err(Error::Validation(_))));
        let zero = [req(1, 0.0, 1, 0, 10.0)];
        assert!(run(&zero, &cfg, &mut OraclePredictor).is_err());
        assert!(run_assigned(&[req(1, 0.0, 1, 1, 10.0)], &cfg, &[3]).is_err());
    }

    fn report_bytes(out: &SimOutput) -> Vec<u8> {
        let mut buf = Vec::new();
        out.report.write_json(&mut buf).unwrap();
        out.report.write_timeline(&mut buf).unwrap();
        buf
    }

    #[test]
    fn same_seed_gives_identical_reports() {
        let sc = mixed_scenario(4, 2.0, 200, 12.0);
        let trace = sc.build_trace().unwrap();
        let a = run(&trace, &sc.sim, &mut NoisyOracle::new(0.3, 4)).unwrap();
        let b = run(&trace, &sc.sim, &mut NoisyOracle::new(0.3, 4)).unwrap();
        assert_eq!(report_bytes(&a), report_bytes(&b));
        assert_eq!(a.decisions, b.decisions);
        assert_eq!(a.migrations, b.migrations);
        let mut cfg = sc.sim.clone();
        cfg.policy = PolicyKind::Random;
        let c = run(&trace, &cfg, &mut OraclePredictor).unwrap();
        let d = run(&trace, &cfg, &mut OraclePredictor).unwrap();
        assert_eq!(report_bytes(&c), report_bytes(&d));
    }

    #[test]
    fn migrations_happen_under_pressure() {
        let sc = mixed_scenario(1, 2.0, 300, 16.0);
        let trace = sc.build_trace().unwrap();
        let out = run(&trace, &sc.sim, &mut NoisyOracle::new(0.3, 1)).unwrap();
        assert!(!out.migrations.is_empty());
        for m in &out.migrations {
            let d = |g: usize| sc.sim.instances[g].iter_ms(1);
            assert!(d(m.dst) < d(m.src), "moves go to stronger instances: {m:?}");
        }
        let rec = out.report.records.iter().filter(|r| r.migrations > 0).count();
        assert!(rec > 0 && out.report.records.iter().all(|r| r.migrations <= sc.sim.risk.max_migrations_per_request));
    }

    #[test]
    fn kv_mode_runs_to_completion() {
        let mut sc = mixed_scenario(2, 2.0, 300, 16.0);
        sc.sim.migration_mode = MigrationMode::KvCache;
        let trace = sc.build_trace().unwrap();
        let out = run(&trace, &sc.sim, &mut NoisyOracle::new(0.3, 2)).unwrap();
        assert!(out.migrations.iter().all(|m| m.mode == "kv_cache"));
        assert_eq!(out.report.summary.total, 300);
    }

    #[test]
    fn isolation_without_migration() {
        // Round robin ignores lengths, so changing requests bound for the
        // second instance must not move completions on the first.
        let cfg = SimConfig {
            instances: vec![profile("a", 10.0, 0.5, 0.1), profile("b", 20.0, 0.5, 0.1)],
            policy: PolicyKind::RoundRobin,
            migration: false,
            ..SimConfig::default()
        };
        let base: Vec<RequestSpec> = (0..20).map(|i| req(i, i as f64 * 7.0, 20 + i as u32, 10 + i as u32, 1e6)).collect();
        let mut other = base.clone();
        for r in other.iter_mut().skip(1).step_by(2) {
            r.output_length *= 3;
        }
        let a = run(&base, &cfg, &mut OraclePredictor).unwrap();
        let b = run(&other, &cfg, &mut OraclePredictor).unwrap();
        for r in base.iter().step_by(2) {
            assert_eq!(completion(&a, r.id), completion(&b, r.id));
        }
        let fixed: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let c = run_assigned(&base, &cfg, &fixed).unwrap();
        let d = run_assigned(&other, &cfg, &fixed).unwrap();
        for r in base.iter().step_by(2) {
            assert_eq!(completion(&c, r.id), completion(&d, r.id));
            assert_eq!(completion(&a, r.id), completion(&c, r.id));
        }
    }

    #[test]
    fn estimates_track_stationary_load() {
        let mut cfg = single(profile("a", 12.0, 0.2, 0.02));
        cfg.record_estimator = true;
        let trace: Vec<RequestSpec> = (0..400).map(|i| req(i, i as f64 * 150.0, 200, 100, 1e6)).collect();
        let out = run(&trace, &cfg, &mut OraclePredictor).unwrap();
        let stats = &out.instances[0];
        let true_d = stats.busy_ms / stats.iterations as f64;
        let late: Vec<_> = out.estimator_samples.iter().filter(|s| s.time_ms > 20_000.0).collect();
        let d: Vec<f64> = late.iter().filter(|s| s.channel == "decode_per_token").map(|s| s.smoothed).collect();
        let mean_d = d.iter().sum::<f64>() / d.len() as f64;
        assert!((mean_d - true_d).abs() / true_d <= 0.15, "{mean_d} vs {true_d}");
        let p = late.iter().rev().find(|s| s.channel == "prefill_per_token").unwrap().smoothed;
        assert!((p - 0.02).abs() / 0.02 <= 0.15);
    }

    fn arb_trace() -> impl Strategy<Value = Vec<RequestSpec>> {
        prop::collection::vec((0.0..400.0f64, 1u32..300, 1u32..80, 50.0..5000.0f64), 1..40).prop_map(|v| {
            let mut v: Vec<_> = v
                .into_iter()
                .enumerate()
                .map(|(i, (t, lin, lout, d))| req(i as u64, t, lin, lout, d))
                .collect();
            v.sort_by(|a, b| a.arrival_ms.total_cmp(&b.arrival_ms));
            v
        })
    }

    fn arb_policy() -> impl Strategy<Value = PolicyKind> {
        prop::sample::select(PolicyKind::ALL.to_vec())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn conservation_and_capacity(trace in arb_trace(), policy in arb_policy(), kv in any::<bool>(), seed in 0u64..4) {
            let mut tight = profile("c", 15.0, 0.3, 0.03);
            tight.memory_tokens = 600;
            tight.max_batch = 3;
            let cfg = SimConfig {
                seed,
                instances: vec![profile("a", 6.0, 0.1, 0.01), profile("b", 9.0, 0.2, 0.02), tight],
                policy,
                migration_mode: if kv { MigrationMode::KvCache } else { MigrationMode::TokenIds },
                risk: RiskCheckConfig { tau: 2, ..RiskCheckConfig::default() },
                ..SimConfig::default()
            };
            let out = run(&trace, &cfg, &mut NoisyOracle::new(0.5, seed)).unwrap();
            let s = &out.report.summary;
            prop_assert_eq!(s.total, trace.len());
            let mut generated = 0u64;
            for (r, spec) in out.report.records.iter().zip(&trace) {
                prop_assert_eq!(r.request_id, spec.id);
                if r.error.is_some() {
                    prop_assert!(r.completion_ms.is_none());
                    prop_assert!(spec.input_length + spec.output_length > 600);
                } else {
                    prop_assert_eq!(r.generated, spec.output_length);
                    prop_assert!(r.completion_ms.unwrap() >= spec.arrival_ms);
                    generated += r.generated as u64;
                }
            }
            prop_assert_eq!(out.instances.iter().map(|i| i.tokens_generated).sum::<u64>(), generated);
            for (st, p) in out.instances.iter().zip(&cfg.instances) {
                prop_assert!(st.peak_batch <= p.max_batch);
                prop_assert!(st.peak_tokens <= p.memory_tokens);
            }
        }
    }
}
