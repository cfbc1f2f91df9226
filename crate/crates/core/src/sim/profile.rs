use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static capability model of one serving instance.
///
/// Decode iterations take `base_ms + slope_ms * b` for a batch of `b`
/// requests. Prefill is charged per non-cached prompt token at admission.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuProfile {
    pub name: String,
    pub base_ms: f64,
    pub slope_ms: f64,
    pub prefill_ms_per_token: f64,
    /// KV capacity in tokens.
    pub memory_tokens: u64,
    pub max_batch: usize,
}

impl GpuProfile {
    pub fn iter_ms(&self, batch: usize) -> f64 {
        self.base_ms + self.slope_ms * batch as f64
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.base_ms > 0.0
            && self.base_ms.is_finite()
            && self.slope_ms >= 0.0
            && self.slope_ms.is_finite()
            && self.prefill_ms_per_token >= 0.0
            && self.prefill_ms_per_token.is_finite()
            && self.memory_tokens > 0
            && self.max_batch > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid profile {}: {self:?}", self.name)))
        }
    }

    fn preset(name: &str, base_ms: f64, slope_ms: f64, prefill_ms_per_token: f64) -> Self {
        GpuProfile {
            name: name.into(),
            base_ms,
            slope_ms,
            prefill_ms_per_token,
            memory_tokens: 200_000,
            max_batch: 64,
        }
    }

    // Synthetic rates ordered by tier. Decode is memory-bound, so a full
    // batch of 64 adds only about a quarter to the base iteration time.
    pub fn h800() -> Self {
        Self::preset("H800", 7.0, 0.03, 0.008)
    }

    pub fn a800() -> Self {
        Self::preset("A800", 9.0, 0.04, 0.012)
    }

    pub fn a40() -> Self {
        Self::preset("A40", 16.0, 0.06, 0.03)
    }

    pub fn v100() -> Self {
        Self::preset("V100", 22.0, 0.08, 0.045)
    }

    /// The four-tier heterogeneous cluster, strongest first.
    pub fn defaults() -> Vec<Self> {
        vec![Self::h800(), Self::a800(), Self::a40(), Self::v100()]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::defaults().into_iter().find(|p| p.name.eq_ignore_ascii_case(name))
    }
}
