use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use hdmon::limitlaw::{CriticalValueTable, TableKey};
use hdmon::simharness::{gen_stream, ScenarioSpec};
use hdmon::{Monitor, MonitorConfig, NormEstimates, Thresholds};
use serde_json::Value;

const CV_REPS: usize = 2000;

fn hdmon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdmon"))
        .args(args)
        .env_remove("HDMON_CACHE_DIR")
        .stdin(Stdio::null())
        .output()
        .expect("binary runs")
}

fn write_csv(path: &Path, rows: &[Vec<f64>]) {
    let body: String = rows
        .iter()
        .map(|r| r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(path, body).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json_lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

struct Fixture {
    dir: tempfile::TempDir,
    spec: ScenarioSpec,
    train: PathBuf,
    stream: PathBuf,
    state: PathBuf,
    cache: PathBuf,
}

fn fixture(delta: f64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ScenarioSpec::null(40, 30).with_q_set(&[2, 4]).with_seed(5);
    if delta > 0.0 {
        spec = spec.with_shift(delta, 30);
    }
    let data = gen_stream(&spec, 0);
    let train = dir.path().join("train.csv");
    let stream = dir.path().join("stream.csv");
    write_csv(&train, &data[..spec.n]);
    write_csv(&stream, &data[spec.n..]);
    let state = dir.path().join("state.json");
    let cache = dir.path().join("cache");
    let out = hdmon(&["train", "--input", s(&train), "--q", "2,4", "--seed", "5", "--output", s(&state)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    Fixture { dir, spec, train, stream, state, cache }
}

fn run_monitor(f: &Fixture, events: &Path) -> Output {
    let reps = CV_REPS.to_string();
    hdmon(&[
        "monitor", "--state", s(&f.state), "--input", s(&f.stream), "--seed", "5", "--reps", &reps,
        "--cache-dir", s(&f.cache), "--output", s(events),
    ])
}

#[test]
fn alarm_matches_the_library_monitor() {
    let f = fixture(4.0);
    let events = f.dir.path().join("events.jsonl");
    let out = run_monitor(&f, &events);
    assert_eq!(out.status.code(), Some(10), "{}", String::from_utf8_lossy(&out.stderr));
    let log = json_lines(&events);
    let alarm = &log.last().unwrap()["alarm"];

    let config = MonitorConfig::new(f.spec.n, f.spec.p).with_q_set(&[2, 4]).with_seed(5);
    let tables: Vec<_> = [2, 4]
        .iter()
        .map(|&q| {
            let key = TableKey::new(q, 2.0, config.boundary, 5).with_reps(CV_REPS);
            CriticalValueTable::load_or_calibrate(&f.cache, key, &[]).unwrap().0
        })
        .collect();
    let thresholds = Thresholds::from_tables(&config, &tables).unwrap();
    let data = gen_stream(&f.spec, 0);
    let est = NormEstimates::estimate(&data[..f.spec.n], &[2, 4], None, 5).unwrap();
    let mut monitor = Monitor::new(config, thresholds).unwrap();
    monitor.train_with_estimates(&data[..f.spec.n], est).unwrap();
    let expected = monitor.run(&data[f.spec.n..]).unwrap().expect("library alarms too");

    assert_eq!(alarm["k_alarm"].as_u64().unwrap() as usize, expected.k_alarm);
    assert_eq!(alarm["m_hat"].as_u64().unwrap() as usize, expected.m_hat);
    let triggered: Vec<u32> = serde_json::from_value(alarm["triggered_q"].clone()).unwrap();
    assert_eq!(triggered, expected.triggered_q);
    // One step record per consumed row, then the alarm record.
    assert_eq!(log.len(), expected.k_alarm - f.spec.n + 1);
}

#[test]
fn quiet_stream_runs_to_the_horizon() {
    let f = fixture(0.0);
    let events = f.dir.path().join("events.jsonl");
    let out = run_monitor(&f, &events);
    let log = json_lines(&events);
    let end = log.last().unwrap();
    if out.status.code() == Some(0) {
        assert_eq!(end["event"], "end");
        assert_eq!(end["status"], "no_alarm");
        assert_eq!(end["k"], end["horizon"]);
        assert_eq!(log.len(), f.spec.horizon_len() - f.spec.n + 1);
    } else {
        assert_eq!(out.status.code(), Some(10));
        assert_eq!(end["event"], "alarm");
    }
}

#[test]
fn ragged_row_stops_with_a_data_error_and_keeps_the_log() {
    let f = fixture(0.0);
    let rows: Vec<Vec<f64>> = gen_stream(&f.spec, 0)[f.spec.n..f.spec.n + 3].to_vec();
    let mut bad = rows.clone();
    bad.push(vec![0.0; 49]);
    write_csv(&f.stream, &bad);
    let events = f.dir.path().join("events.jsonl");
    let out = run_monitor(&f, &events);
    assert_eq!(out.status.code(), Some(2));
    let log = json_lines(&events);
    assert_eq!(log.len(), 4);
    assert_eq!(log[3]["event"], "error");
    assert_eq!(log[3]["k"], 44);
}

#[test]
fn truncated_stream_is_reported() {
    let f = fixture(0.0);
    write_csv(&f.stream, &gen_stream(&f.spec, 0)[f.spec.n..f.spec.n + 5]);
    let events = f.dir.path().join("events.jsonl");
    let out = run_monitor(&f, &events);
    let end = json_lines(&events).pop().unwrap();
    if out.status.code() == Some(0) {
        assert_eq!(end["status"], "truncated");
        assert_eq!(end["k"], 45);
    }
}

#[test]
fn calibrate_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let args = ["calibrate", "--q", "2", "--boundary", "T1,T3", "--reps", "1000", "--grid", "8", "--cache-dir", s(&cache)];
    let first = hdmon(&args);
    assert!(first.status.success());
    let files: Vec<_> = fs::read_dir(&cache).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 2);
    let before: Vec<_> = files.iter().map(|p| fs::read(p).unwrap()).collect();
    let second = hdmon(&args);
    assert!(second.status.success());
    let text = String::from_utf8(second.stdout).unwrap();
    assert_eq!(text.matches("\"status\":\"exists\"").count(), 2);
    let after: Vec<_> = files.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn odd_q_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hdmon(&["calibrate", "--q", "3", "--cache-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(hdmon(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn train_rejects_short_or_degenerate_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let short = dir.path().join("short.csv");
    write_csv(&short, &[vec![1.0, 2.0], vec![0.5, 1.0], vec![2.0, 0.0]]);
    let out = hdmon(&["train", "--input", s(&short), "--q", "2"]);
    assert_eq!(out.status.code(), Some(2));

    let flat = dir.path().join("flat.csv");
    write_csv(&flat, &vec![vec![1.0; 3]; 12]);
    let out = hdmon(&["train", "--input", s(&flat), "--q", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let f = fixture(0.0);
    let cfg = f.dir.path().join("session.json");
    fs::write(&cfg, r#"{"q":[2],"seed":5}"#).unwrap();
    let state = f.dir.path().join("s2.json");
    let out = hdmon(&["train", "--config", s(&cfg), "--input", s(&f.train), "--output", s(&state)]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&fs::read_to_string(&state).unwrap()).unwrap();
    assert_eq!(v["q_set"], serde_json::json!([2]));

    let out = hdmon(&["train", "--config", s(&cfg), "--q", "2,4", "--input", s(&f.train), "--output", s(&state)]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&fs::read_to_string(&state).unwrap()).unwrap();
    assert_eq!(v["q_set"], serde_json::json!([2, 4]));

    fs::write(&cfg, r#"{"bogus":1}"#).unwrap();
    let out = hdmon(&["train", "--config", s(&cfg), "--input", s(&f.train)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let run = |name: &str| {
        let out_path = dir.path().join(name);
        let out = hdmon(&[
            "simulate", "--n", "30", "--p", "10", "--q", "2", "--reps", "40", "--cv-reps", "1000",
            "--delta", "2", "--seed", "3", "--cache-dir", s(&cache), "--output", s(&out_path),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(out_path).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
    let zero = hdmon(&["simulate", "--reps", "0", "--cache-dir", s(&cache)]);
    assert_eq!(zero.status.code(), Some(1));
}
