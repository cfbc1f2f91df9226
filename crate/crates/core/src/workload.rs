//! Request traces: the JSON-lines trace format, a seeded synthetic
//! multi-task generator, and deadline assignment by SLO scaling.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::sim::GpuProfile;

/// One inference request.
///
/// `output_length` is simulator ground truth. Routing code never reads it
/// except through the explicit oracle predictors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestSpec {
    pub id: u64,
    pub arrival_ms: f64,
    pub prompt: String,
    pub input_length: u32,
    pub output_length: u32,
    pub task_type: String,
    /// End-to-end budget measured from arrival.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_ms: Option<f64>,
}

/// Whitespace-separated tokens of `text`, as `str::split_whitespace`
/// yields them. ASCII text takes a faster byte scan.
pub fn tokenize(text: &str) -> Tokens<'_> {
    if text.is_ascii() {
        Tokens::Ascii(text.as_bytes(), text)
    } else {
        Tokens::Unicode(text.split_whitespace())
    }
}

pub enum Tokens<'a> {
    /// Remaining bytes and the same text as `str`.
    Ascii(&'a [u8], &'a str),
    Unicode(std::str::SplitWhitespace<'a>),
}

impl<'a> Iterator for Tokens<'a> {
    type Item = &'a str;

    #[inline]
    fn next(&mut self) -> Option<&'a str> {
        match self {
            Tokens::Ascii(bytes, text) => {
                // For ASCII, `char::is_whitespace` is exactly these bytes.
                let ws = |b: u8| matches!(b, b' ' | b'\t' | b'\n' | b'\x0B' | b'\x0C' | b'\r');
                let start = bytes.iter().position(|&b| !ws(b))?;
                let len = bytes[start..].iter().position(|&b| ws(b)).unwrap_or(bytes.len() - start);
                let token = &text[start..start + len];
                *bytes = &bytes[start + len..];
                *text = &text[start + len..];
                Some(token)
            }
            Tokens::Unicode(it) => it.next(),
        }
    }
}

impl RequestSpec {
    pub fn tokens(&self) -> Tokens<'_> {
        tokenize(&self.prompt)
    }

    /// Deadline, or +inf when none has been assigned.
    pub fn deadline(&self) -> f64 {
        self.deadline_ms.unwrap_or(f64::INFINITY)
    }

    /// Full context once generation finishes.
    pub fn total_tokens(&self) -> u64 {
        self.input_length as u64 + self.output_length as u64
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.input_length == 0 {
            return Err("input_length must be at least 1".into());
        }
        if self.output_length == 0 {
            return Err("output_length must be at least 1".into());
        }
        if !(self.arrival_ms.is_finite() && self.arrival_ms >= 0.0) {
            return Err(format!("arrival_ms must be finite and >= 0, got {}", self.arrival_ms));
        }
        let counted = self.tokens().count();
        if counted != self.input_length as usize {
            return Err(format!(
                "input_length {} does not match prompt token count {counted}",
                self.input_length
            ));
        }
        if let Some(d) = self.deadline_ms {
            if !(d > 0.0) {
                return Err(format!("deadline_ms must be positive, got {d}"));
            }
        }
        Ok(())
    }
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> std::result::Result<&'a Value, String> {
    obj.get(name).ok_or_else(|| format!("missing field {name}"))
}

fn field_u64(obj: &Map<String, Value>, name: &str) -> std::result::Result<u64, String> {
    field(obj, name)?
        .as_u64()
        .ok_or_else(|| format!("field {name} must be a non-negative integer"))
}

fn field_u32(obj: &Map<String, Value>, name: &str) -> std::result::Result<u32, String> {
    let v = field_u64(obj, name)?;
    u32::try_from(v).map_err(|_| format!("field {name} out of range"))
}

fn field_f64(obj: &Map<String, Value>, name: &str) -> std::result::Result<f64, String> {
    field(obj, name)?
        .as_f64()
        .ok_or_else(|| format!("field {name} must be a number"))
}

fn field_str(obj: &Map<String, Value>, name: &str) -> std::result::Result<String, String> {
    field(obj, name)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| format!("field {name} must be a string"))
}

fn parse_record(line: &str) -> std::result::Result<RequestSpec, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("record must be a JSON object")?;
    let deadline_ms = match obj.get("deadline_ms") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_f64().ok_or("field deadline_ms must be a number")?),
    };
    let spec = RequestSpec {
        id: field_u64(obj, "id")?,
        arrival_ms: field_f64(obj, "arrival_ms")?,
        prompt: field_str(obj, "prompt")?,
        input_length: field_u32(obj, "input_length")?,
        output_length: field_u32(obj, "output_length")?,
        task_type: field_str(obj, "task_type")?,
        deadline_ms,
    };
    spec.validate()?;
    Ok(spec)
}

/// Parses trace records from any reader. Blank lines are skipped; unknown
/// fields are ignored.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<RequestSpec>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let spec = parse_record(&line).map_err(|msg| Error::Parse { line: i + 1, msg })?;
        if !seen.insert(spec.id) {
            return Err(Error::Validation(format!(
                "duplicate request id {} (line {})",
                spec.id,
                i + 1
            )));
        }
        out.push(spec);
    }
    sort_by_arrival(&mut out);
    Ok(out)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<RequestSpec>> {
    let file = File::open(path.as_ref())?;
    parse_trace(BufReader::new(file))
}

pub fn write_trace_to<W: Write>(mut w: W, trace: &[RequestSpec]) -> Result<()> {
    for spec in trace {
        serde_json::to_writer(&mut w, spec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[RequestSpec]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_trace_to(BufWriter::new(file), trace)
}

fn sort_by_arrival(trace: &mut [RequestSpec]) {
    trace.sort_by(|a, b| a.arrival_ms.total_cmp(&b.arrival_ms).then(a.id.cmp(&b.id)));
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalProcess {
    Poisson { rate_rps: f64 },
    FixedInterval { interval_ms: f64 },
    ExplicitTimes { times_ms: Vec<f64> },
}

/// One task family in a synthetic workload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCluster {
    pub name: String,
    /// Inclusive prompt-length range in tokens.
    pub input_range: (u32, u32),
    /// Inclusive output-length range in tokens.
    pub output_range: (u32, u32),
    /// Size of the cluster's own token pool.
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    /// Relative sampling weight.
    #[serde(default = "default_weight")]
    pub weight: f64,
    /// Leading tokens shared by every prompt of the cluster (a system
    /// prompt), which gives prefix caches something to hit.
    #[serde(default)]
    pub shared_prefix: u32,
    /// When > 1 the output range is split into this many equal sub-ranges
    /// and half of each prompt's body is drawn from a sub-range-specific
    /// pool, so prompt text carries information about output length. The
    /// marginal output distribution stays uniform over `output_range`.
    #[serde(default = "default_levels")]
    pub difficulty_levels: u32,
}

fn default_vocab_size() -> usize {
    256
}
fn default_weight() -> f64 {
    1.0
}
fn default_levels() -> u32 {
    1
}

impl TaskCluster {
    pub fn new(name: &str, input_range: (u32, u32), output_range: (u32, u32)) -> Self {
        TaskCluster {
            name: name.to_owned(),
            input_range,
            output_range,
            vocab_size: default_vocab_size(),
            weight: default_weight(),
            shared_prefix: 0,
            difficulty_levels: default_levels(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub request_count: usize,
    pub arrival: ArrivalProcess,
    pub clusters: Vec<TaskCluster>,
    /// Keep every cluster's vocabulary disjoint from the others.
    #[serde(default = "default_true")]
    pub disjoint_vocab: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl TraceConfig {
    fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::Validation("cluster_spec must not be empty".into()));
        }
        for c in &self.clusters {
            let (ilo, ihi) = c.input_range;
            let (olo, ohi) = c.output_range;
            if ilo == 0 || ilo > ihi {
                return Err(Error::Validation(format!("cluster {}: bad input range", c.name)));
            }
            if olo == 0 || olo > ohi {
                return Err(Error::Validation(format!("cluster {}: bad output range", c.name)));
            }
            if c.vocab_size == 0 {
                return Err(Error::Validation(format!("cluster {}: empty vocabulary", c.name)));
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::Validation(format!("cluster {}: weight must be > 0", c.name)));
            }
            if c.difficulty_levels == 0 || c.difficulty_levels > ohi - olo + 1 {
                return Err(Error::Validation(format!(
                    "cluster {}: difficulty_levels must be in 1..=output range width",
                    c.name
                )));
            }
        }
        if self.disjoint_vocab {
            let mut names = HashSet::new();
            for c in &self.clusters {
                if !names.insert(c.name.as_str()) {
                    return Err(Error::Validation(format!(
                        "duplicate cluster name {} breaks vocabulary disjointness",
                        c.name
                    )));
                }
            }
        }
        match &self.arrival {
            ArrivalProcess::Poisson { rate_rps } if !(*rate_rps > 0.0) => {
                Err(Error::Validation("poisson rate must be > 0".into()))
            }
            ArrivalProcess::FixedInterval { interval_ms } if !(*interval_ms >= 0.0) => {
                Err(Error::Validation("interval must be >= 0".into()))
            }
            ArrivalProcess::ExplicitTimes { times_ms } if times_ms.len() != self.request_count => {
                Err(Error::Validation(format!(
                    "explicit arrival list has {} entries for {} requests",
                    times_ms.len(),
                    self.request_count
                )))
            }
            _ => Ok(()),
        }
    }
}

fn pool_token(cluster: &TaskCluster, disjoint: bool, pool: &str, i: usize) -> String {
    if disjoint {
        format!("{}_{pool}{i}", cluster.name)
    } else {
        format!("{pool}{i}")
    }
}

/// Draws a synthetic trace. Pure function of `config`.
pub fn generate_synthetic(config: &TraceConfig) -> Result<Vec<RequestSpec>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let weights = WeightedIndex::new(config.clusters.iter().map(|c| c.weight))
        .map_err(|e| Error::Validation(format!("cluster weights: {e}")))?;

    let mut clock = 0.0f64;
    let mut out = Vec::with_capacity(config.request_count);
    for i in 0..config.request_count {
        let arrival_ms = match &config.arrival {
            ArrivalProcess::Poisson { rate_rps } => {
                let gap_s: f64 = Exp::new(*rate_rps).expect("validated rate").sample(&mut rng);
                clock += gap_s * 1000.0;
                clock
            }
            ArrivalProcess::FixedInterval { interval_ms } => i as f64 * interval_ms,
            ArrivalProcess::ExplicitTimes { times_ms } => times_ms[i],
        };

        let cluster = &config.clusters[weights.sample(&mut rng)];
        let disjoint = config.disjoint_vocab;
        let levels = cluster.difficulty_levels;
        let level = rng.random_range(0..levels);
        let (olo, ohi) = cluster.output_range;
        let width = (ohi - olo + 1) as u64;
        let sub_lo = olo as u64 + width * level as u64 / levels as u64;
        let sub_hi = olo as u64 + width * (level as u64 + 1) / levels as u64 - 1;
        let output_length = rng.random_range(sub_lo..=sub_hi) as u32;
        let input_length = rng.random_range(cluster.input_range.0..=cluster.input_range.1);

        let mut tokens = Vec::with_capacity(input_length as usize);
        let prefix = cluster.shared_prefix.min(input_length);
        for p in 0..prefix {
            tokens.push(pool_token(cluster, disjoint, "s", p as usize));
        }
        let level_pool = (cluster.vocab_size / 4).max(1);
        let level_pool_name = format!("l{level}_");
        for _ in prefix..input_length {
            let tok = if levels > 1 && rng.random_bool(0.5) {
                pool_token(cluster, disjoint, &level_pool_name, rng.random_range(0..level_pool))
            } else {
                pool_token(cluster, disjoint, "w", rng.random_range(0..cluster.vocab_size))
            };
            tokens.push(tok);
        }

        out.push(RequestSpec {
            id: i as u64,
            arrival_ms,
            prompt: tokens.join(" "),
            input_length,
            output_length,
            task_type: cluster.name.clone(),
            deadline_ms: None,
        });
    }
    sort_by_arrival(&mut out);
    Ok(out)
}

/// Deadline policy: scale the unloaded solo latency on a reference profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SloPolicy {
    pub reference_profile: String,
    pub relaxation_factor: f64,
}

/// Latency of `spec` running alone on `profile`: no queue, no cache hit,
/// batch size 1, true output length.
pub fn solo_latency_ms(spec: &RequestSpec, profile: &GpuProfile) -> f64 {
    profile.prefill_ms_per_token * spec.input_length as f64
        + profile.iter_ms(1) * spec.output_length as f64
}

/// Sets `D_r = factor × solo_latency(r)` on every request.
pub fn assign_slos(
    trace: &[RequestSpec],
    policy: &SloPolicy,
    profiles: &[GpuProfile],
) -> Result<Vec<RequestSpec>> {
    if !(policy.relaxation_factor > 0.0 && policy.relaxation_factor.is_finite()) {
        return Err(Error::Config(format!(
            "relaxation factor must be > 0, got {}",
            policy.relaxation_factor
        )));
    }
    let reference = profiles
        .iter()
        .find(|p| p.name == policy.reference_profile)
        .ok_or_else(|| {
            Error::Config(format!("unknown reference profile {}", policy.reference_profile))
        })?;
    Ok(trace
        .iter()
        .map(|r| RequestSpec {
            deadline_ms: Some(policy.relaxation_factor * solo_latency_ms(r, reference)),
            ..r.clone()
        })
        .collect())
}

/// Gives every request the same deadline.
pub fn assign_fixed_deadline(trace: &[RequestSpec], deadline_ms: f64) -> Vec<RequestSpec> {
    trace
        .iter()
        .map(|r| RequestSpec { deadline_ms: Some(deadline_ms), ..r.clone() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: u64, arrival: f64) -> String {
        format!(
            r#"{{"id":{id},"arrival_ms":{arrival},"prompt":"a b c","input_length":3,"output_length":10,"task_type":"t"}}"#
        )
    }

    #[test]
    fn three_valid_lines() {
        let text = [line(0, 0.0), line(1, 1.0), line(2, 2.0)].join("\n");
        let trace = parse_trace(text.as_bytes()).unwrap();
        assert_eq!(trace.len(), 3);
        assert_eq!(trace.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn sorts_by_arrival() {
        let text = [line(0, 5.0), line(1, 1.0), line(2, 3.0)].join("\n");
        let trace = parse_trace(text.as_bytes()).unwrap();
        let arrivals: Vec<f64> = trace.iter().map(|r| r.arrival_ms).collect();
        assert_eq!(arrivals, vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn missing_field_names_line() {
        let bad = r#"{"id":1,"arrival_ms":1,"prompt":"a","output_length":3,"task_type":"t"}"#;
        let text = format!("{}\n{bad}\n", line(0, 0.0));
        let err = parse_trace(text.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "line 2: missing field input_length");
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = [line(4, 0.0), line(4, 1.0)].join("\n");
        assert!(matches!(parse_trace(text.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_fields_ignored_and_deadline_read() {
        let text = r#"{"id":1,"arrival_ms":2.5,"prompt":"x y","input_length":2,"output_length":3,"task_type":"t","deadline_ms":100,"extra":[1,2]}"#;
        let trace = parse_trace(text.as_bytes()).unwrap();
        assert_eq!(trace[0].deadline_ms, Some(100.0));
    }

    #[test]
    fn token_count_must_match() {
        let text = r#"{"id":1,"arrival_ms":0,"prompt":"x y","input_length":3,"output_length":3,"task_type":"t"}"#;
        assert!(matches!(parse_trace(text.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    fn motivation_config(seed: u64) -> TraceConfig {
        TraceConfig {
            request_count: 600,
            arrival: ArrivalProcess::Poisson { rate_rps: 10.0 },
            clusters: vec![TaskCluster::new("chat", (100, 100), (100, 500))],
            disjoint_vocab: true,
            seed,
        }
    }

    #[test]
    fn motivation_shape() {
        let trace = generate_synthetic(&motivation_config(1)).unwrap();
        assert_eq!(trace.len(), 600);
        assert!(trace.iter().all(|r| r.input_length == 100));
        assert!(trace.iter().all(|r| (100..=500).contains(&r.output_length)));
        let span_s = trace.last().unwrap().arrival_ms / 1000.0;
        // 600 arrivals at 10 rps span about a minute.
        assert!((45.0..75.0).contains(&span_s), "span {span_s}");
    }

    #[test]
    fn seeded_generation_is_byte_identical() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_trace_to(&mut a, &generate_synthetic(&motivation_config(9)).unwrap()).unwrap();
        write_trace_to(&mut b, &generate_synthetic(&motivation_config(9)).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        write_trace_to(&mut c, &generate_synthetic(&motivation_config(10)).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn disjoint_clusters_share_no_tokens() {
        let mut a = TaskCluster::new("sql", (20, 40), (10, 50));
        a.shared_prefix = 8;
        a.difficulty_levels = 3;
        let b = TaskCluster::new("code", (20, 40), (100, 300));
        let cfg = TraceConfig {
            request_count: 300,
            arrival: ArrivalProcess::FixedInterval { interval_ms: 10.0 },
            clusters: vec![a, b],
            disjoint_vocab: true,
            seed: 3,
        };
        let trace = generate_synthetic(&cfg).unwrap();
        let vocab = |name: &str| -> HashSet<String> {
            trace
                .iter()
                .filter(|r| r.task_type == name)
                .flat_map(|r| r.tokens().map(str::to_owned).collect::<Vec<_>>())
                .collect()
        };
        let (sa, sb) = (vocab("sql"), vocab("code"));
        assert!(!sa.is_empty() && !sb.is_empty());
        assert!(sa.is_disjoint(&sb));
        for r in &trace {
            assert_eq!(r.tokens().count(), r.input_length as usize);
        }
    }

    #[test]
    fn empty_cluster_list_rejected() {
        let mut cfg = motivation_config(1);
        cfg.clusters.clear();
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn poisson_mean_gap_converges() {
        let cfg = TraceConfig {
            request_count: 20_000,
            arrival: ArrivalProcess::Poisson { rate_rps: 50.0 },
            clusters: vec![TaskCluster::new("a", (1, 1), (1, 1))],
            disjoint_vocab: true,
            seed: 77,
        };
        let trace = generate_synthetic(&cfg).unwrap();
        let mean_gap_ms = trace.last().unwrap().arrival_ms / trace.len() as f64;
        let expected = 1000.0 / 50.0;
        assert!(((mean_gap_ms - expected) / expected).abs() < 0.05, "{mean_gap_ms}");
    }

    fn profile(p: f64, d: f64) -> GpuProfile {
        GpuProfile {
            name: "ref".into(),
            base_ms: d,
            slope_ms: 0.0,
            prefill_ms_per_token: p,
            memory_tokens: 1 << 20,
            max_batch: 8,
        }
    }

    fn one_request(input: u32, output: u32) -> RequestSpec {
        RequestSpec {
            id: 0,
            arrival_ms: 0.0,
            prompt: vec!["t"; input as usize].join(" "),
            input_length: input,
            output_length: output,
            task_type: "x".into(),
            deadline_ms: None,
        }
    }

    #[test]
    fn slo_examples() {
        let profiles = [profile(1.0, 10.0)];
        let trace = [one_request(100, 200)];
        let policy = |f: f64| SloPolicy { reference_profile: "ref".into(), relaxation_factor: f };
        let solo = assign_slos(&trace, &policy(1.0), &profiles).unwrap();
        assert_eq!(solo[0].deadline_ms, Some(2100.0));
        let doubled = assign_slos(&trace, &policy(2.0), &profiles).unwrap();
        assert_eq!(doubled[0].deadline_ms, Some(4200.0));

        // 2000 ms solo latency scaled by 3.
        let trace = [one_request(1000, 100)];
        let tripled = assign_slos(&trace, &policy(3.0), &profiles).unwrap();
        assert_eq!(tripled[0].deadline_ms, Some(6000.0));
    }

    #[test]
    fn unknown_reference_profile() {
        let policy = SloPolicy { reference_profile: "nope".into(), relaxation_factor: 1.0 };
        let err = assign_slos(&[one_request(1, 1)], &policy, &[profile(1.0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn tokenize_splits_like_the_standard_library() {
        for text in ["", "  ", "a", " a  b\tc\n", "x\x0By\x0Cz\r", "caf\u{e9} au\u{a0}lait \u{2003}x"] {
            let ours: Vec<&str> = tokenize(text).collect();
            let std: Vec<&str> = text.split_whitespace().collect();
            assert_eq!(ours, std, "{text:?}");
        }
    }

    proptest::proptest! {
        #[test]
        fn tokenize_matches_split_whitespace(text in "[ a-c\t\n\x0B\x0C\r\u{a0}\u{e9}]{0,40}") {
            let ours: Vec<&str> = tokenize(&text).collect();
            let std: Vec<&str> = text.split_whitespace().collect();
            proptest::prop_assert_eq!(ours, std);
        }
    }

    proptest::proptest! {
        #[test]
        fn slo_monotone_in_factor(a in 0.1f64..5.0, delta in 0.01f64..5.0, input in 1u32..2000, output in 1u32..2000) {
            let profiles = [profile(0.05, 12.0)];
            let trace = [one_request(input, output)];
            let mk = |f| SloPolicy { reference_profile: "ref".into(), relaxation_factor: f };
            let lo = assign_slos(&trace, &mk(a), &profiles).unwrap()[0].deadline_ms.unwrap();
            let hi = assign_slos(&trace, &mk(a + delta), &profiles).unwrap()[0].deadline_ms.unwrap();
            proptest::prop_assert!(lo < hi);
        }
    }
}
