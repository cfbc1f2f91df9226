//! Goodput, SLO violations, latency breakdowns and report output.

pub mod bench;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack when comparing a latency to its deadline, absorbing float noise
/// from summing many iteration durations.
pub const SLO_EPSILON_MS: f64 = 1e-6;

/// Outcome of one request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: u64,
    pub arrival_ms: f64,
    /// Infinite when the request has no deadline.
    #[serde(with = "lenient_f64")]
    pub deadline_ms: f64,
    pub input_length: u32,
    pub output_length: u32,
    /// Initial predicted output length, if a predictor was consulted.
    pub predicted_output: Option<u32>,
    /// Instances the request ran on, in order.
    pub instance_path: Vec<usize>,
    pub queue_ms: f64,
    pub prefill_ms: f64,
    pub decode_ms: f64,
    pub transfer_ms: f64,
    pub migrations: u32,
    pub first_token_ms: Option<f64>,
    pub completion_ms: Option<f64>,
    pub generated: u32,
    pub within_slo: bool,
    /// Set when the request was rejected instead of served.
    pub error: Option<String>,
}

impl RequestRecord {
    pub fn latency_ms(&self) -> Option<f64> {
        self.completion_ms.map(|c| c - self.arrival_ms)
    }

    pub fn meets_deadline(&self) -> bool {
        self.error.is_none()
            && self.latency_ms().is_some_and(|l| l <= self.deadline_ms + SLO_EPSILON_MS)
    }
}

/// JSON has no infinity; write it as the string "inf".
mod lenient_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() || !s.is_human_readable() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            Err(serde::ser::Error::custom(format!("unsupported value {v}")))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad number {t:?}"))),
        }
    }
}

fn check_nonempty(records: &[RequestRecord]) -> Result<()> {
    if records.is_empty() {
        Err(Error::Validation("no request records".into()))
    } else {
        Ok(())
    }
}

/// Seconds from the first arrival to the last completion; 0 if nothing
/// completed.
pub fn span_s(records: &[RequestRecord]) -> f64 {
    let first = records.iter().map(|r| r.arrival_ms).fold(f64::INFINITY, f64::min);
    let last = records.iter().filter_map(|r| r.completion_ms).fold(f64::NEG_INFINITY, f64::max);
    if last.is_finite() && first.is_finite() {
        ((last - first) / 1e3).max(0.0)
    } else {
        0.0
    }
}

pub fn within_slo_count(records: &[RequestRecord]) -> usize {
    records.iter().filter(|r| r.within_slo).count()
}

/// Requests finished within their deadline per second of span. A zero span
/// yields the within-SLO count itself.
pub fn goodput(records: &[RequestRecord]) -> Result<f64> {
    check_nonempty(records)?;
    let good = within_slo_count(records) as f64;
    let span = span_s(records);
    Ok(if span > 0.0 { good / span } else { good })
}

/// Fraction of all arrivals, rejected ones included, that missed the SLO.
pub fn violation_ratio(records: &[RequestRecord]) -> Result<f64> {
    check_nonempty(records)?;
    Ok((records.len() - within_slo_count(records)) as f64 / records.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl Distribution {
    /// Nearest-rank percentiles.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Distribution::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Distribution {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: rank(0.5),
            p95: rank(0.95),
            p99: rank(0.99),
            max: v[v.len() - 1],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MigrationStats {
    pub count: usize,
    pub aborted: usize,
    pub mean_cost_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: String,
    pub predictor: String,
    pub total: usize,
    pub within_slo: usize,
    pub violated: usize,
    pub rejected: usize,
    pub goodput_rps: f64,
    pub violation_ratio: f64,
    pub span_s: f64,
    pub latency_ms: Distribution,
    /// Present only when decisions were timed.
    pub decision_latency_us: Option<Distribution>,
    pub migrations: MigrationStats,
    pub predictor_mae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub summary: Summary,
    pub records: Vec<RequestRecord>,
}

impl MetricsReport {
    pub fn build(
        policy: &str,
        predictor: &str,
        records: Vec<RequestRecord>,
        decision_latency_us: Option<&[f64]>,
        migrations: MigrationStats,
    ) -> Result<Self> {
        let within = within_slo_count(&records);
        let rejected = records.iter().filter(|r| r.error.is_some()).count();
        let latencies: Vec<f64> = records.iter().filter_map(RequestRecord::latency_ms).collect();
        let predicted: Vec<(f64, f64)> = records
            .iter()
            .filter_map(|r| r.predicted_output.map(|p| (p as f64, r.output_length as f64)))
            .collect();
        let predictor_mae = if predicted.is_empty() {
            None
        } else {
            Some(predicted.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / predicted.len() as f64)
        };
        let summary = Summary {
            policy: policy.into(),
            predictor: predictor.into(),
            total: records.len(),
            within_slo: within,
            violated: records.len() - within,
            rejected,
            goodput_rps: goodput(&records)?,
            violation_ratio: violation_ratio(&records)?,
            span_s: span_s(&records),
            latency_ms: Distribution::of(&latencies),
            decision_latency_us: decision_latency_us.map(Distribution::of),
            migrations,
            predictor_mae,
        };
        Ok(MetricsReport { summary, records })
    }

    pub fn goodput(&self) -> f64 {
        self.summary.goodput_rps
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, &self.summary)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn write_timeline<W: Write>(&self, w: W) -> Result<()> {
        write_timeline(w, &self.records)
    }
}

#[derive(Serialize)]
struct TimelineRow<'a> {
    request_id: u64,
    arrival_ms: f64,
    instance_path: &'a str,
    prefill_ms: f64,
    decode_ms: f64,
    queue_ms: f64,
    migrations: u32,
    completion_ms: Option<f64>,
    deadline_ms: f64,
    within_slo: bool,
}

/// Per-request CSV; `instance_path` joins instance indices with `>`.
pub fn write_timeline<W: Write>(w: W, records: &[RequestRecord]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(TIMELINE_COLUMNS)?;
    for r in records {
        let path: Vec<String> = r.instance_path.iter().map(usize::to_string).collect();
        out.serialize(TimelineRow {
            request_id: r.request_id,
            arrival_ms: r.arrival_ms,
            instance_path: &path.join(">"),
            prefill_ms: r.prefill_ms,
            decode_ms: r.decode_ms,
            queue_ms: r.queue_ms,
            migrations: r.migrations,
            completion_ms: r.completion_ms,
            deadline_ms: r.deadline_ms,
            within_slo: r.within_slo,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub const TIMELINE_COLUMNS: [&str; 10] = [
    "request_id",
    "arrival_ms",
    "instance_path",
    "prefill_ms",
    "decode_ms",
    "queue_ms",
    "migrations",
    "completion_ms",
    "deadline_ms",
    "within_slo",
];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn record(id: u64, arrival: f64, completion: Option<f64>, deadline: f64) -> RequestRecord {
        let mut r = RequestRecord {
            request_id: id,
            arrival_ms: arrival,
            deadline_ms: deadline,
            input_length: 10,
            output_length: 10,
            predicted_output: None,
            instance_path: vec![0],
            queue_ms: 0.0,
            prefill_ms: 0.0,
            decode_ms: 0.0,
            transfer_ms: 0.0,
            migrations: 0,
            first_token_ms: None,
            completion_ms: completion,
            generated: 10,
            within_slo: false,
            error: None,
        };
        r.within_slo = r.meets_deadline();
        r
    }

    #[test]
    fn goodput_examples() {
        // 30 of 60 within SLO over 60 s.
        let recs: Vec<_> = (0..60)
            .map(|i| {
                let done = if i == 59 { 60_000.0 } else { 1000.0 };
                record(i, 0.0, Some(done), if i < 30 { 1e9 } else { 1.0 })
            })
            .collect();
        assert!((goodput(&recs).unwrap() - 0.5).abs() < 1e-12);

        let bad: Vec<_> = (0..5).map(|i| record(i, 0.0, Some(100.0), 1.0)).collect();
        assert_eq!(goodput(&bad).unwrap(), 0.0);
        assert_eq!(violation_ratio(&bad).unwrap(), 1.0);

        let all: Vec<_> = (0..100).map(|i| record(i, 0.0, Some(if i == 0 { 10_000.0 } else { 5.0 }), 1e9)).collect();
        assert!((goodput(&all).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(violation_ratio(&all).unwrap(), 0.0);

        assert!(goodput(&[]).is_err());
        assert!(violation_ratio(&[]).is_err());
    }

    #[test]
    fn zero_span_yields_count() {
        let recs = vec![record(0, 5.0, Some(5.0), 1.0), record(1, 5.0, Some(5.0), 1.0)];
        assert_eq!(goodput(&recs).unwrap(), 2.0);
    }

    #[test]
    fn violation_fraction() {
        let recs: Vec<_> = (0..600).map(|i| record(i, 0.0, Some(10.0), if i < 15 { 1.0 } else { 100.0 })).collect();
        assert!((violation_ratio(&recs).unwrap() - 0.025).abs() < 1e-15);
    }

    #[test]
    fn rejected_counts_as_violation() {
        let mut r = record(0, 0.0, None, 1e9);
        r.error = Some("too large".into());
        r.within_slo = r.meets_deadline();
        let recs = vec![r, record(1, 0.0, Some(1.0), 1e9)];
        assert_eq!(violation_ratio(&recs).unwrap(), 0.5);
    }

    #[test]
    fn timeline_header_and_path() {
        let mut r = record(4, 1.0, Some(2.5), 10.0);
        r.instance_path = vec![3, 1];
        let mut buf = Vec::new();
        write_timeline(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "request_id,arrival_ms,instance_path,prefill_ms,decode_ms,queue_ms,migrations,completion_ms,deadline_ms,within_slo"
        );
        assert_eq!(lines.next().unwrap(), "4,1.0,3>1,0.0,0.0,0.0,0,2.5,10.0,true");
    }

    #[test]
    fn percentiles() {
        let d = Distribution::of(&(1..=100).map(f64::from).collect::<Vec<_>>());
        assert_eq!((d.p50, d.p95, d.p99, d.max), (50.0, 95.0, 99.0, 100.0));
        assert_eq!(d.mean, 50.5);
    }

    proptest! {
        #[test]
        fn report_is_consistent_and_round_trips(
            rows in proptest::collection::vec((0.0f64..1e5, 0.0f64..1e4, 1.0f64..1e4, proptest::bool::ANY), 1..40)
        ) {
            let recs: Vec<_> = rows.iter().enumerate().map(|(i, &(a, l, d, rej))| {
                let mut r = record(i as u64, a, (!rej).then_some(a + l), d);
                if rej { r.error = Some("oversize".into()); }
                r.predicted_output = Some((l as u32) % 500 + 1);
                r.within_slo = r.meets_deadline();
                r
            }).collect();
            let rep = MetricsReport::build("goodserve", "oracle", recs, Some(&[1.0, 2.0]), MigrationStats::default()).unwrap();
            let s = &rep.summary;
            prop_assert_eq!(s.within_slo + s.violated, s.total);
            prop_assert!((0.0..=1.0).contains(&s.violation_ratio));
            prop_assert!(s.goodput_rps >= 0.0);
            prop_assert_eq!(within_slo_count(&rep.records), s.within_slo);
            if s.span_s > 0.0 {
                prop_assert!((s.goodput_rps * s.span_s - s.within_slo as f64).abs() < 1e-6 * (1.0 + s.within_slo as f64));
            }
            let mut buf = Vec::new();
            rep.write_json(&mut buf).unwrap();
            let back: MetricsReport = serde_json::from_slice(&buf).unwrap();
            prop_assert_eq!(back, rep);
        }
    }
}
