use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmaConfig {
    /// Weight on the newest observation, in (0, 1].
    pub alpha: f64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        EmaConfig { alpha: 0.3 }
    }
}

impl EmaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha > 0.0 && self.alpha <= 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    QueueWait,
    PrefillPerToken,
    DecodePerToken,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 3] =
        [ChannelKind::QueueWait, ChannelKind::PrefillPerToken, ChannelKind::DecodePerToken];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::QueueWait => "queue_wait",
            ChannelKind::PrefillPerToken => "prefill_per_token",
            ChannelKind::DecodePerToken => "decode_per_token",
        }
    }
}

/// One exponentially smoothed quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Channel<T> {
    pub value: T,
    pub count: u64,
    pub last_update: f64,
}

impl<T: Real> Channel<T> {
    pub fn seeded(value: T) -> Self {
        Channel { value, count: 0, last_update: 0.0 }
    }

    /// `value ← α·v + (1−α)·value`; the first observation replaces the
    /// seed. Rejects negative or non-finite input and returns false.
    pub fn observe(&mut self, alpha: T, v: T, now: f64) -> bool {
        if !v.is_finite() || v < T::zero() {
            log::warn!("rejected estimator observation {v}");
            return false;
        }
        self.value = if self.count == 0 { v } else { alpha * v + (T::one() - alpha) * self.value };
        self.count += 1;
        self.last_update = now;
        true
    }
}

/// Smoothed (q, p, d) for one instance, in the caller's time unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct InstanceEstimate<T> {
    pub queue_wait: Channel<T>,
    pub prefill_per_token: Channel<T>,
    pub decode_per_token: Channel<T>,
}

impl<T: Real> InstanceEstimate<T> {
    /// Cold start: no queueing, unloaded rates.
    pub fn seeded(prefill_per_token: T, decode_per_token: T) -> Self {
        InstanceEstimate {
            queue_wait: Channel::seeded(T::zero()),
            prefill_per_token: Channel::seeded(prefill_per_token),
            decode_per_token: Channel::seeded(decode_per_token),
        }
    }

    pub fn q(&self) -> T {
        self.queue_wait.value
    }

    pub fn p(&self) -> T {
        self.prefill_per_token.value
    }

    pub fn d(&self) -> T {
        self.decode_per_token.value
    }

    pub fn channel(&self, kind: ChannelKind) -> &Channel<T> {
        match kind {
            ChannelKind::QueueWait => &self.queue_wait,
            ChannelKind::PrefillPerToken => &self.prefill_per_token,
            ChannelKind::DecodePerToken => &self.decode_per_token,
        }
    }

    pub fn channel_mut(&mut self, kind: ChannelKind) -> &mut Channel<T> {
        match kind {
            ChannelKind::QueueWait => &mut self.queue_wait,
            ChannelKind::PrefillPerToken => &mut self.prefill_per_token,
            ChannelKind::DecodePerToken => &mut self.decode_per_token,
        }
    }

    pub fn observe(&mut self, cfg: &EmaConfig, kind: ChannelKind, v: T, now: f64) -> bool {
        self.channel_mut(kind).observe(T::lit(cfg.alpha), v, now)
    }
}
