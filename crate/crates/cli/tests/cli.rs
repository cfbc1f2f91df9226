use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SCENARIO: &str = r#"
[trace.synthetic]
request_count = 60
seed = 5

[trace.synthetic.arrival]
kind = "poisson"
rate_rps = 12.0

[[trace.synthetic.clusters]]
name = "chat"
input_range = [40, 200]
output_range = [20, 150]

[[trace.synthetic.clusters]]
name = "code"
input_range = [200, 600]
output_range = [50, 300]

[slo]
kind = "scaled"
reference_profile = "A800"
relaxation_factor = 2.0

[predictor]
kind = "oracle"

[sim]
seed = 5
"#;

const TRAINING: &str = r#"
kind = "moe"

[corpus.synthetic]
request_count = 300
seed = 2

[corpus.synthetic.arrival]
kind = "poisson"
rate_rps = 10.0

[[corpus.synthetic.clusters]]
name = "a"
input_range = [20, 200]
output_range = [20, 300]

[train]
experts = 4
epochs = 2
gate_epochs = 2
hidden_width = 8
vocab_cap = 128
"#;

fn goodput(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_goodput")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenario_file(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("scenario.toml");
    fs::write(&p, SCENARIO).unwrap();
    p
}

#[test]
fn simulate_writes_summary_and_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_file(dir.path());
    let out = dir.path().join("runs/a");
    let o = goodput(&["simulate", "--config", s(&cfg), "--policy", "goodserve", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["summary.json", "report.json", "timeline.csv", "decisions.csv", "migrations.csv", "instances.json", "manifest.toml"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["total"], 60);
    assert_eq!(summary["policy"], "goodserve");
    let decisions = fs::read_to_string(out.join("decisions.csv")).unwrap();
    assert_eq!(decisions.lines().count(), 61);
}

#[test]
fn unknown_policy_lists_the_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    let o = goodput(&["simulate", "--policy", "nonsense", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for p in ["goodserve", "round_robin", "least_request", "prefix_affinity"] {
        assert!(err.contains(p), "{err}");
    }
}

#[test]
fn unknown_flag_prints_usage() {
    let o = goodput(&["simulate", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = goodput(&[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn brute_force_states_the_size_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = goodput(&["brute-force", "--requests", "11", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at most 10 requests"), "{}", stderr(&o));
}

#[test]
fn brute_force_reports_the_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bf");
    let o = goodput(&["brute-force", "--seed", "3", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("optimal.json")).unwrap()).unwrap();
    let ratio = r["ratio"].as_f64().unwrap();
    assert!(ratio > 0.0 && ratio <= 1.0);
    let replay = dir.path().join("bf2");
    let o = goodput(&["brute-force", "--config", s(&out.join("manifest.toml")), "--out", s(&replay)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read(out.join("optimal.json")).unwrap(), fs::read(replay.join("optimal.json")).unwrap());
}

#[test]
fn manifest_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_file(dir.path());
    let first = dir.path().join("first");
    let o = goodput(&["simulate", "--config", s(&cfg), "--arms", "goodserve,least_request", "--seed", "9", "--out", s(&first)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(first.join("arms.csv").is_file());
    for arm in ["goodserve", "least_request"] {
        let again = dir.path().join(format!("again-{arm}"));
        let manifest = first.join(arm).join("manifest.toml");
        let o = goodput(&["simulate", "--config", s(&manifest), "--out", s(&again)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        for f in ["report.json", "summary.json", "timeline.csv", "decisions.csv", "migrations.csv"] {
            assert_eq!(fs::read(first.join(arm).join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{arm}/{f}");
        }
    }
}

#[test]
fn manifest_of_another_command_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bf");
    assert_eq!(goodput(&["brute-force", "--out", s(&out)]).status.code(), Some(0));
    let o = goodput(&["simulate", "--config", s(&out.join("manifest.toml")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("brute-force"));
}

#[test]
fn slo_scale_needs_scaled_deadlines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fixed.toml");
    fs::write(&cfg, SCENARIO.replace("kind = \"scaled\"\nreference_profile = \"A800\"\nrelaxation_factor = 2.0", "kind = \"fixed\"\ndeadline_ms = 5000.0")).unwrap();
    let o = goodput(&["simulate", "--config", s(&cfg), "--slo-scale", "3", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn gen_trace_writes_deadlines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_file(dir.path());
    let out = dir.path().join("trace");
    let o = goodput(&["gen-trace", "--config", s(&cfg), "--slo-scale", "1.5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 60);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first["deadline_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn train_then_evaluate_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    fs::write(&cfg, TRAINING).unwrap();
    let trained = dir.path().join("model");
    let o = goodput(&["train-predictor", "--config", s(&cfg), "--out", s(&trained)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(trained.join("training.json")).unwrap()).unwrap();
    assert_eq!(report["train_samples"], 240);
    assert_eq!(report["test_samples"], 60);
    assert_eq!(report["experts"], 4);

    let retrained = dir.path().join("model2");
    let o = goodput(&["train-predictor", "--config", s(&trained.join("manifest.toml")), "--out", s(&retrained)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read(trained.join("model.json")).unwrap(), fs::read(retrained.join("model.json")).unwrap());

    let eval = dir.path().join("eval");
    let o = goodput(&[
        "eval-predictor",
        "--config",
        s(&trained.join("manifest.toml")),
        "--checkpoint",
        s(&trained.join("model.json")),
        "--predictor",
        "oracle",
        "--out",
        s(&eval),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let scored: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("eval.json")).unwrap()).unwrap();
    let names: Vec<&str> = scored.as_array().unwrap().iter().map(|e| e["predictor"].as_str().unwrap()).collect();
    assert_eq!(names, ["moe", "oracle", "history"]);
    assert_eq!(scored[1]["mae"], 0.0);

    // The checkpoint also drives a simulation.
    let scenario = scenario_file(dir.path());
    let sim = dir.path().join("sim");
    let o = goodput(&[
        "simulate",
        "--config",
        s(&scenario),
        "--predictor",
        "moe",
        "--checkpoint",
        s(&trained.join("model.json")),
        "--out",
        s(&sim),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn bench_runs_on_a_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = goodput(&[
        "bench-overhead",
        "--predictor",
        "history",
        "--instances",
        "4,16",
        "--decisions",
        "200",
        "--rps",
        "1000",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("overhead.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("manifest.toml").is_file());
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = goodput(&["simulate", "--config", s(&dir.path().join("absent.toml")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}
