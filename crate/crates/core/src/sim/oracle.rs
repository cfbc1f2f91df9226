//! Exhaustive search over request-to-instance assignments.
//!
//! Without migration an instance's behaviour depends only on the requests
//! assigned to it, so each (instance, subset) pair is simulated once and
//! every full assignment is scored from that table.

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::engine::run_assigned;
use crate::error::{Error, Result};
use crate::workload::RequestSpec;

pub const MAX_REQUESTS: usize = 10;
pub const MAX_INSTANCES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalAssignment {
    /// Instance per request, in trace order.
    pub assignment: Vec<usize>,
    pub within_slo: usize,
    /// Sum of end-to-end latencies of completed requests.
    pub total_latency_ms: f64,
    pub assignments_evaluated: u64,
}

#[derive(Clone, Copy, Default)]
struct Cell {
    good: usize,
    latency: f64,
}

pub fn brute_force_optimal(trace: &[RequestSpec], cfg: &SimConfig) -> Result<OptimalAssignment> {
    let (r, m) = (trace.len(), cfg.instances.len());
    if r > MAX_REQUESTS || m > MAX_INSTANCES {
        return Err(Error::Size(format!(
            "brute force supports at most {MAX_REQUESTS} requests and {MAX_INSTANCES} instances, got {r} requests and {m} instances"
        )));
    }
    cfg.validate()?;
    if r == 0 {
        return Ok(OptimalAssignment { assignment: vec![], within_slo: 0, total_latency_ms: 0.0, assignments_evaluated: 1 });
    }
    // Oversize requests are rejected whatever the assignment.
    let min_memory = cfg.instances.iter().map(|p| p.memory_tokens).min().unwrap();
    let admissible: Vec<usize> = (0..r)
        .filter(|&i| trace[i].input_length as u64 + trace[i].output_length as u64 <= min_memory)
        .collect();
    let n = admissible.len();

    let mut table = vec![vec![Cell::default(); 1 << n]; m];
    for (g, row) in table.iter_mut().enumerate() {
        let single = SimConfig { instances: vec![cfg.instances[g].clone()], migration: false, ..cfg.clone() };
        for (mask, cell) in row.iter_mut().enumerate().skip(1) {
            let subset: Vec<RequestSpec> =
                (0..n).filter(|b| mask >> b & 1 == 1).map(|b| trace[admissible[b]].clone()).collect();
            let out = run_assigned(&subset, &single, &vec![0; subset.len()])?;
            *cell = Cell {
                good: out.report.summary.within_slo,
                latency: out.report.records.iter().filter_map(|x| x.latency_ms()).sum(),
            };
        }
    }

    let total = (m as u64).pow(n as u32);
    let mut digits = vec![0usize; n];
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    let mut masks = vec![0usize; m];
    for _ in 0..total {
        masks.fill(0);
        for (b, &g) in digits.iter().enumerate() {
            masks[g] |= 1 << b;
        }
        let (good, latency) = masks
            .iter()
            .enumerate()
            .fold((0, 0.0), |(c, l), (g, &mask)| (c + table[g][mask].good, l + table[g][mask].latency));
        let better = match &best {
            None => true,
            Some((bg, bl, _)) => good > *bg || (good == *bg && latency < *bl),
        };
        if better {
            best = Some((good, latency, digits.clone()));
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < m {
                break;
            }
            *d = 0;
        }
    }
    let (good, latency, digits) = best.expect("at least one assignment");
    let mut assignment = vec![0; r];
    for (b, &i) in admissible.iter().enumerate() {
        assignment[i] = digits[b];
    }
    Ok(OptimalAssignment { assignment, within_slo: good, total_latency_ms: latency, assignments_evaluated: total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::GpuProfile;

    fn req(id: u64, arrival_ms: f64, input: u32, output: u32, deadline_ms: Option<f64>) -> RequestSpec {
        RequestSpec {
            id,
            arrival_ms,
            prompt: (0..input).map(|k| format!("q{id}w{k}")).collect::<Vec<_>>().join(" "),
            input_length: input,
            output_length: output,
            task_type: "t".into(),
            deadline_ms,
        }
    }

    fn cfg() -> SimConfig {
        SimConfig { instances: vec![GpuProfile::h800(), GpuProfile::v100()], ..SimConfig::default() }
    }

    #[test]
    fn single_request_takes_the_better_instance() {
        let trace = [req(0, 0.0, 50, 100, Some(1e6))];
        let best = brute_force_optimal(&trace, &cfg()).unwrap();
        assert_eq!(best.assignment, vec![0]);
        assert_eq!(best.within_slo, 1);
        assert_eq!(best.assignments_evaluated, 2);
        let on = |g| run_assigned(&trace, &cfg(), &[g]).unwrap().report.records[0].latency_ms().unwrap();
        assert_eq!(best.total_latency_ms, on(0).min(on(1)));
    }

    #[test]
    fn infinite_deadlines_saturate() {
        let trace: Vec<_> = (0..6).map(|i| req(i, i as f64, 20, 30 + i as u32, None)).collect();
        let best = brute_force_optimal(&trace, &cfg()).unwrap();
        assert_eq!(best.within_slo, 6);
        assert_eq!(best.assignments_evaluated, 64);
    }

    #[test]
    fn tight_deadlines_split_across_instances() {
        // Each request fits only on the strong instance when alone there.
        let trace: Vec<_> = (0..4).map(|i| req(i, 0.0, 10, 200, Some(2000.0))).collect();
        let best = brute_force_optimal(&trace, &cfg()).unwrap();
        let direct = run_assigned(&trace, &cfg(), &best.assignment).unwrap();
        assert_eq!(direct.report.summary.within_slo, best.within_slo);
        assert!(best.within_slo >= 1);
    }

    #[test]
    fn size_guard() {
        let trace: Vec<_> = (0..11).map(|i| req(i, 0.0, 1, 1, None)).collect();
        assert!(matches!(brute_force_optimal(&trace, &cfg()), Err(Error::Size(_))));
        let five = SimConfig { instances: vec![GpuProfile::a40(); 5], ..SimConfig::default() };
        assert!(matches!(brute_force_optimal(&trace[..2], &five), Err(Error::Size(_))));
    }
}
