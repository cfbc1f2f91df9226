use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationMode {
    /// Ship token ids and re-prefill at the destination.
    TokenIds,
    /// Ship the KV cache; no re-prefill.
    KvCache,
}

impl MigrationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MigrationMode::TokenIds => "token_ids",
            MigrationMode::KvCache => "kv_cache",
        }
    }
}

impl fmt::Display for MigrationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MigrationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token_ids" => Ok(MigrationMode::TokenIds),
            "kv_cache" => Ok(MigrationMode::KvCache),
            _ => Err(Error::Validation(format!("unknown migration mode {s:?}; expected token_ids or kv_cache"))),
        }
    }
}

/// Per-token transfer sizes of the served model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub name: String,
    pub kv_bytes_per_token: u64,
    pub id_bytes: u64,
}

impl Default for ModelProfile {
    /// 8B-class model with a 16-bit KV cache.
    fn default() -> Self {
        ModelProfile { name: "8b-fp16".into(), kv_bytes_per_token: 131_072, id_bytes: 4 }
    }
}

/// A planned move of one request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationAction {
    pub request_id: u64,
    pub source: usize,
    pub destination: usize,
    pub mode: MigrationMode,
    /// Prompt plus tokens generated so far.
    pub tokens_to_transfer: u64,
    pub estimated_cost_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MigrationCost {
    pub transfer_ms: f64,
    pub reprefill_ms: f64,
}

impl MigrationCost {
    pub fn total_ms(&self) -> f64 {
        self.transfer_ms + self.reprefill_ms
    }
}

/// Milliseconds to push `bytes` through a `bandwidth_bps` pipe.
pub fn transfer_ms(bytes: u64, bandwidth_bps: f64) -> f64 {
    bytes as f64 * 8.0 / bandwidth_bps * 1e3
}

/// Cost of moving a `tokens`-long context. Token-id mode pays a re-prefill
/// of the tokens not already cached at the destination.
pub fn migration_cost(
    mode: MigrationMode,
    tokens: u64,
    destination_hit: u64,
    destination_prefill_ms_per_token: f64,
    model: &ModelProfile,
    bandwidth_bps: f64,
) -> MigrationCost {
    match mode {
        MigrationMode::TokenIds => MigrationCost {
            transfer_ms: transfer_ms(tokens * model.id_bytes, bandwidth_bps),
            reprefill_ms: tokens.saturating_sub(destination_hit) as f64 * destination_prefill_ms_per_token,
        },
        MigrationMode::KvCache => MigrationCost {
            transfer_ms: transfer_ms(tokens * model.kv_bytes_per_token, bandwidth_bps),
            reprefill_ms: 0.0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEN_GBPS: f64 = 10e9;

    #[test]
    fn token_ids_are_cheap_to_ship() {
        let c = migration_cost(MigrationMode::TokenIds, 8192, 0, 0.0, &ModelProfile::default(), TEN_GBPS);
        let us = c.transfer_ms * 1e3;
        assert!((us - 26.2144).abs() < 1e-9, "{us}");
    }

    #[test]
    fn kv_transfer_is_large() {
        let c = migration_cost(MigrationMode::KvCache, 8192, 0, 0.012, &ModelProfile::default(), TEN_GBPS);
        // 8192 × 131072 bytes × 8 bits / 1e10 bit/s.
        let oracle = 8192.0 * 131072.0 * 8.0 / 1e10 * 1e3;
        assert!((c.transfer_ms - oracle).abs() < 1e-9);
        assert!((c.transfer_ms - 858.99).abs() < 0.01);
        assert_eq!(c.reprefill_ms, 0.0);
    }

    #[test]
    fn full_hit_removes_reprefill() {
        let c = migration_cost(MigrationMode::TokenIds, 500, 500, 0.03, &ModelProfile::default(), TEN_GBPS);
        assert_eq!(c.reprefill_ms, 0.0);
    }

    #[test]
    fn small_context_cost_is_prefill_dominated() {
        let c = migration_cost(MigrationMode::TokenIds, 500, 0, 0.03, &ModelProfile::default(), TEN_GBPS);
        assert!(c.transfer_ms < 1.0);
        assert!(c.reprefill_ms > 10.0 * c.transfer_ms);
    }

    #[test]
    fn mode_names() {
        assert_eq!("kv_cache".parse::<MigrationMode>().unwrap(), MigrationMode::KvCache);
        assert!("ssh".parse::<MigrationMode>().is_err());
    }
}
