use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::latency::estimate_latency;
use crate::error::{Error, Result};
use crate::workload::RequestSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Goodserve,
    /// Just-enough selection fed with true lengths and projected state.
    Oracle,
    Random,
    RoundRobin,
    LeastRequest,
    LowestTpm,
    PrefixAffinity,
    MaxFreeMemory,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::Goodserve,
        PolicyKind::Oracle,
        PolicyKind::Random,
        PolicyKind::RoundRobin,
        PolicyKind::LeastRequest,
        PolicyKind::LowestTpm,
        PolicyKind::PrefixAffinity,
        PolicyKind::MaxFreeMemory,
    ];

    pub const BASELINES: [PolicyKind; 6] = [
        PolicyKind::Random,
        PolicyKind::RoundRobin,
        PolicyKind::LeastRequest,
        PolicyKind::LowestTpm,
        PolicyKind::PrefixAffinity,
        PolicyKind::MaxFreeMemory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Goodserve => "goodserve",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Random => "random",
            PolicyKind::RoundRobin => "round_robin",
            PolicyKind::LeastRequest => "least_request",
            PolicyKind::LowestTpm => "lowest_tpm",
            PolicyKind::PrefixAffinity => "prefix_affinity",
            PolicyKind::MaxFreeMemory => "max_free_memory",
        }
    }

    /// Whether the policy uses just-enough selection and rechecks.
    pub fn is_slo_aware(self) -> bool {
        matches!(self, PolicyKind::Goodserve | PolicyKind::Oracle)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            let valid: Vec<&str> = PolicyKind::ALL.iter().map(|p| p.as_str()).collect();
            Error::Validation(format!("unknown policy {s:?}; valid policies: {}", valid.join(", ")))
        })
    }
}

/// What a policy may see of one instance at decision time.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InstanceView {
    pub q_ms: f64,
    pub p_ms: f64,
    pub d_ms: f64,
    /// Queued plus running plus inbound requests.
    pub pending: usize,
    pub hit_tokens: u32,
    /// Tokens processed over the trailing TPM window.
    pub recent_tokens: u64,
    pub free_tokens: u64,
    pub max_batch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub request_id: u64,
    pub chosen: usize,
    /// Estimated end-to-end latency per instance, in ms.
    pub estimated_ms: Vec<f64>,
    /// Whether any instance met the deadline.
    pub feasible: bool,
    pub decision_latency_us: Option<f64>,
}

/// Ranks `a` over `b` when it has fewer pending requests, then lower id.
fn tie_break(views: &[InstanceView], a: usize, b: usize) -> Ordering {
    views[b].pending.cmp(&views[a].pending).then(b.cmp(&a))
}

/// Just-enough choice: the slowest-decoding instance that still meets
/// `deadline_ms`, else the one that overshoots least.
pub fn just_enough(estimates: &[f64], deadline_ms: f64, views: &[InstanceView]) -> (usize, bool) {
    let mut best: Option<usize> = None;
    for g in 0..views.len() {
        if estimates[g] <= deadline_ms {
            best = match best {
                Some(b)
                    if views[g].d_ms.total_cmp(&views[b].d_ms).then_with(|| tie_break(views, g, b))
                        != Ordering::Greater =>
                {
                    Some(b)
                }
                _ => Some(g),
            };
        }
    }
    if let Some(g) = best {
        return (g, true);
    }
    let g = (0..views.len())
        .max_by(|&a, &b| {
            estimates[b].total_cmp(&estimates[a]).then_with(|| tie_break(views, a, b))
        })
        .expect("at least one instance");
    (g, false)
}

fn argmax_by_key<K: PartialOrd>(n: usize, mut key: impl FnMut(usize) -> K) -> usize {
    // Strict improvement keeps the lowest index on ties.
    let mut best = 0;
    let mut best_key = key(0);
    for g in 1..n {
        let k = key(g);
        if k > best_key {
            best = g;
            best_key = k;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct Router {
    pub policy: PolicyKind,
    /// Load weight in the prefix-affinity score.
    pub affinity_lambda: f64,
    next_rr: usize,
    rng: ChaCha8Rng,
}

impl Router {
    pub fn new(policy: PolicyKind, seed: u64) -> Self {
        Router { policy, affinity_lambda: 0.5, next_rr: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn select(
        &mut self,
        request: &RequestSpec,
        predicted_output: u32,
        views: &[InstanceView],
    ) -> Result<RoutingDecision> {
        if views.is_empty() {
            return Err(Error::Validation("no instances registered".into()));
        }
        let lin = request.input_length as f64;
        let lout = predicted_output as f64;
        let estimated_ms: Vec<f64> = views
            .iter()
            .map(|v| estimate_latency(v.q_ms, v.p_ms, v.d_ms, lin, v.hit_tokens.min(request.input_length) as f64, lout))
            .collect();
        let deadline = request.deadline();
        let n = views.len();
        let chosen = match self.policy {
            PolicyKind::Goodserve | PolicyKind::Oracle => just_enough(&estimated_ms, deadline, views).0,
            PolicyKind::Random => self.rng.random_range(0..n),
            PolicyKind::RoundRobin => {
                let g = self.next_rr % n;
                self.next_rr = (g + 1) % n;
                g
            }
            PolicyKind::LeastRequest => argmax_by_key(n, |g| std::cmp::Reverse(views[g].pending)),
            PolicyKind::LowestTpm => argmax_by_key(n, |g| std::cmp::Reverse(views[g].recent_tokens)),
            PolicyKind::PrefixAffinity => argmax_by_key(n, |g| {
                let v = &views[g];
                v.hit_tokens.min(request.input_length) as f64 / lin
                    - self.affinity_lambda * v.pending as f64 / v.max_batch.max(1) as f64
            }),
            PolicyKind::MaxFreeMemory => argmax_by_key(n, |g| views[g].free_tokens),
        };
        let feasible = estimated_ms.iter().any(|&t| t <= deadline);
        Ok(RoutingDecision { request_id: request.id, chosen, estimated_ms, feasible, decision_latency_us: None })
    }
}
