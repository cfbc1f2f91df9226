use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::migration::{migration_cost, MigrationAction, MigrationMode, ModelProfile};
use super::select::InstanceView;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskCheckConfig {
    /// Iterations of an instance between rechecks.
    pub tau: u32,
    pub max_migrations_per_request: u32,
    /// Moves allowed out of one instance per check.
    pub per_instance_budget: u32,
}

impl Default for RiskCheckConfig {
    fn default() -> Self {
        RiskCheckConfig { tau: 50, max_migrations_per_request: 2, per_instance_budget: 1 }
    }
}

impl RiskCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::Config("tau must be >= 1".into()));
        }
        Ok(())
    }
}

/// A request on the instance being checked.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveRequest {
    pub request_id: u64,
    pub arrival_ms: f64,
    pub deadline_ms: f64,
    pub input_length: u32,
    pub generated: u32,
    pub predicted_remaining: u32,
    /// Still waiting for admission (no KV state yet).
    pub queued: bool,
    /// Time already spent in the current instance's queue.
    pub waited_ms: f64,
    /// Prefix hit on the current instance.
    pub source_hit: u32,
    pub migrations: u32,
    /// Iterations of the current instance since the request landed there
    /// by migration; `None` if it never moved.
    pub iterations_since_migration: Option<u64>,
}

impl ActiveRequest {
    pub fn context(&self) -> u64 {
        self.input_length as u64 + self.generated as u64
    }
}

/// Link and model parameters of a migration.
#[derive(Clone, Debug, PartialEq)]
pub struct MigrationModel {
    pub mode: MigrationMode,
    pub model: ModelProfile,
    pub bandwidth_bps: f64,
}

/// Finds at-risk requests on `source` and plans moves to faster instances.
///
/// `hit(request, g)` gives the prefix hit of a request's prompt on
/// instance `g`. Requests are visited oldest first.
pub fn check_risk(
    source: usize,
    active: &[ActiveRequest],
    now_ms: f64,
    views: &[InstanceView],
    cfg: &RiskCheckConfig,
    link: &MigrationModel,
    mut hit: impl FnMut(&ActiveRequest, usize) -> u32,
) -> Vec<MigrationAction> {
    let mut order: Vec<&ActiveRequest> = active.iter().collect();
    order.sort_by(|a, b| a.arrival_ms.total_cmp(&b.arrival_ms).then(a.request_id.cmp(&b.request_id)));
    let src = &views[source];
    let mut actions = Vec::new();
    for r in order {
        if actions.len() as u32 >= cfg.per_instance_budget {
            break;
        }
        if r.migrations >= cfg.max_migrations_per_request {
            continue;
        }
        if matches!(r.iterations_since_migration, Some(n) if n < cfg.tau as u64) {
            continue;
        }
        let due = r.arrival_ms + r.deadline_ms;
        let left = r.predicted_remaining as f64;
        let mut remaining = src.d_ms * left;
        if r.queued {
            remaining += (src.q_ms - r.waited_ms).max(0.0)
                + src.p_ms * r.context().saturating_sub(r.source_hit as u64) as f64;
        }
        if now_ms + remaining <= due {
            continue;
        }
        // Queued requests have no KV state, so they always move as ids.
        let mode = if r.queued { MigrationMode::TokenIds } else { link.mode };
        let tokens = r.context();
        let mut best: Option<(usize, f64)> = None;
        for (g, v) in views.iter().enumerate() {
            if g == source || v.d_ms >= src.d_ms {
                continue;
            }
            let h = hit(r, g).min(r.input_length) as u64;
            let cost = migration_cost(mode, tokens, h, v.p_ms, &link.model, link.bandwidth_bps);
            let wait = match mode {
                MigrationMode::TokenIds => v.q_ms,
                MigrationMode::KvCache => 0.0,
            };
            let finish = now_ms + cost.total_ms() + wait + v.d_ms * left;
            if finish > due {
                continue;
            }
            let better = match best {
                None => true,
                Some((b, _)) => match v.d_ms.total_cmp(&views[b].d_ms) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => (v.pending, g) < (views[b].pending, b),
                },
            };
            if better {
                best = Some((g, cost.total_ms()));
            }
        }
        if let Some((g, cost)) = best {
            actions.push(MigrationAction {
                request_id: r.request_id,
                source,
                destination: g,
                mode,
                tokens_to_transfer: tokens,
                estimated_cost_ms: cost,
            });
        }
    }
    actions
}
