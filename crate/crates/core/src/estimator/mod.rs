//! Black-box capability estimation: per-instance smoothed queue wait,
//! prefill rate and decode rate, plus prefix-cache hit lookup.

pub mod ema;
pub mod prefix;

use std::io::Write;

use serde::Serialize;

pub use ema::{Channel, ChannelKind, EmaConfig, InstanceEstimate};
pub use prefix::{block_hashes, PrefixCacheConfig, PrefixCacheIndex};

use crate::error::Result;
use crate::num::Real;

/// One row of the estimator state dump.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorSample {
    pub time_ms: f64,
    pub instance: usize,
    pub channel: &'static str,
    pub observation: f64,
    pub smoothed: f64,
}

/// Estimates for every instance, optionally recording each update.
#[derive(Clone, Debug)]
pub struct Estimator<T> {
    pub cfg: EmaConfig,
    instances: Vec<InstanceEstimate<T>>,
    trace: Option<Vec<EstimatorSample>>,
}

impl<T: Real> Estimator<T> {
    /// `seeds` holds the unloaded (prefill, decode) rates per instance.
    pub fn new(cfg: EmaConfig, seeds: &[(T, T)], record: bool) -> Self {
        Estimator {
            cfg,
            instances: seeds.iter().map(|&(p, d)| InstanceEstimate::seeded(p, d)).collect(),
            trace: record.then(Vec::new),
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, instance: usize) -> &InstanceEstimate<T> {
        &self.instances[instance]
    }

    pub fn all(&self) -> &[InstanceEstimate<T>] {
        &self.instances
    }

    pub fn observe(&mut self, instance: usize, kind: ChannelKind, value: T, now: f64) -> bool {
        let est = &mut self.instances[instance];
        let ok = est.observe(&self.cfg, kind, value, now);
        if let (true, Some(trace)) = (ok, self.trace.as_mut()) {
            trace.push(EstimatorSample {
                time_ms: now,
                instance,
                channel: kind.as_str(),
                observation: value.as_f64(),
                smoothed: est.channel(kind).value.as_f64(),
            });
        }
        ok
    }

    pub fn samples(&self) -> &[EstimatorSample] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_samples(&mut self) -> Vec<EstimatorSample> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }
}

pub fn write_samples_csv<W: Write>(w: W, samples: &[EstimatorSample]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in samples {
        out.serialize(s)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_and_dumps() {
        let mut e: Estimator<f64> = Estimator::new(EmaConfig { alpha: 0.5 }, &[(0.01, 10.0), (0.02, 20.0)], true);
        assert!(e.observe(1, ChannelKind::DecodePerToken, 30.0, 5.0));
        assert!(!e.observe(1, ChannelKind::QueueWait, -3.0, 6.0));
        assert_eq!(e.get(1).d(), 30.0);
        assert_eq!(e.get(0).d(), 10.0);
        assert_eq!(e.samples().len(), 1);
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, e.samples()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "time_ms,instance,channel,observation,smoothed\n5.0,1,decode_per_token,30.0,30.0\n");
    }
}
