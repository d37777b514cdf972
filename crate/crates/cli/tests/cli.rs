//! End-to-end tests of the `splitfl` binary: exit codes, file outputs, and
//! rerun determinism.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_splitfl");

const CONFIG: &str = r#"
name = "cli-test"

[model]
cut = 1
layers = [
  { kind = "dense", in = 4, out = 12 },
  { kind = "relu", dim = 12 },
  { kind = "dense", in = 12, out = 3 },
  { kind = "softmax_xent_head", dim = 3 },
]

[dataset]
kind = "blobs"
classes = 3
dims = 4
per_class = 40
spread = 1.0

[partition]
clients = 5
gamma = 0.4

[rounds]
total = 5
local_epochs = 2
batch_size = 8
selection_rate = 0.6
method = "smofi"
global_momentum = 0.3

[optim]
eta = 0.05

[seeds]
data = 1
init = 2
selection = 3
batching = 4
profiles = 5

[target]
mode = "absolute"
value = 0.6
"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, contents: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_outputs_and_reruns_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.toml", CONFIG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    let first = run(&["run", "--config", &config, "--out", out_a.to_str().unwrap()]);
    assert!(first.status.success(), "{first:?}");
    let second = run(&[
        "run",
        "--config",
        &config,
        "--out",
        out_b.to_str().unwrap(),
        "--workers",
        "3",
    ]);
    assert!(second.status.success(), "{second:?}");

    for file in ["cli-test.csv", "cli-test.summary.json"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between reruns/worker counts");
    }
    let csv = std::fs::read_to_string(out_a.join("cli-test.csv")).unwrap();
    assert!(csv.starts_with("round,accuracy,cum_time_s,cohort,js_mean\n"));
    assert_eq!(csv.lines().count(), 6); // header + 5 rounds
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.toml", CONFIG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert!(run(&["run", "--config", &config, "--out", out_a.to_str().unwrap()])
        .status
        .success());
    assert!(run(&[
        "run",
        "--config",
        &config,
        "--out",
        out_b.to_str().unwrap(),
        "--seed-data",
        "999",
    ])
    .status
    .success());
    let a = std::fs::read(out_a.join("cli-test.csv")).unwrap();
    let b = std::fs::read(out_b.join("cli-test.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn invalid_config_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = CONFIG.replace("batch_size = 8", "batch_size = 0");
    let config = write_config(dir.path(), "bad.toml", &bad);
    let out = run(&["run", "--config", &config]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("rounds.batch_size"), "{stderr}");

    let missing = run(&["run", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn divergence_exits_3_with_round() {
    let dir = tempfile::tempdir().unwrap();
    let diverging = CONFIG.replace("eta = 0.05", "eta = 1e120");
    let config = write_config(dir.path(), "div.toml", &diverging);
    let out = run(&["run", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("diverged at round 1"), "{stderr}");
}

#[test]
fn compare_reports_speedups_for_matching_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let base_cfg = write_config(
        dir.path(),
        "base.toml",
        &CONFIG
            .replace("name = \"cli-test\"", "name = \"base\"")
            .replace("method = \"smofi\"", "method = \"fedavg\"")
            .replace("global_momentum = 0.3", "global_momentum = 0.0"),
    );
    let method_cfg = write_config(
        dir.path(),
        "method.toml",
        &CONFIG.replace("name = \"cli-test\"", "name = \"method\""),
    );
    assert!(run(&["run", "--config", &base_cfg, "--out", out.to_str().unwrap()])
        .status
        .success());
    assert!(run(&["run", "--config", &method_cfg, "--out", out.to_str().unwrap()])
        .status
        .success());

    let base_summary = out.join("base.summary.json");
    let method_summary = out.join("method.summary.json");
    let cmp = run(&[
        "compare",
        "--runs",
        base_summary.to_str().unwrap(),
        method_summary.to_str().unwrap(),
    ]);
    assert!(cmp.status.success(), "{cmp:?}");
    let stdout = String::from_utf8_lossy(&cmp.stdout);
    assert!(stdout.contains("target accuracy"), "{stdout}");
    assert!(stdout.contains("base") && stdout.contains("method"), "{stdout}");

    // runs with different data are not comparable
    let other_cfg = write_config(
        dir.path(),
        "other.toml",
        &CONFIG
            .replace("name = \"cli-test\"", "name = \"other\"")
            .replace("data = 1", "data = 42"),
    );
    assert!(run(&["run", "--config", &other_cfg, "--out", out.to_str().unwrap()])
        .status
        .success());
    let mismatched = run(&[
        "compare",
        "--runs",
        base_summary.to_str().unwrap(),
        out.join("other.summary.json").to_str().unwrap(),
    ]);
    assert_eq!(mismatched.status.code(), Some(1));
}

#[test]
fn run_with_baseline_reports_speedups() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let base_cfg = write_config(
        dir.path(),
        "base.toml",
        &CONFIG
            .replace("name = \"cli-test\"", "name = \"base\"")
            .replace("method = \"smofi\"", "method = \"fedavg\"")
            .replace("global_momentum = 0.3", "global_momentum = 0.0"),
    );
    let method_cfg = write_config(dir.path(), "method.toml", CONFIG);
    assert!(run(&["run", "--config", &base_cfg, "--out", out.to_str().unwrap()])
        .status
        .success());
    let with_baseline = run(&[
        "run",
        "--config",
        &method_cfg,
        "--out",
        out.to_str().unwrap(),
        "--baseline",
        out.join("base.summary.json").to_str().unwrap(),
    ]);
    assert!(with_baseline.status.success(), "{with_baseline:?}");
    let stdout = String::from_utf8_lossy(&with_baseline.stdout);
    assert!(stdout.contains("speedup vs base"), "{stdout}");
    let summary = std::fs::read_to_string(out.join("cli-test.summary.json")).unwrap();
    assert!(summary.contains("\"baseline\": \"base\""), "{summary}");
}

#[test]
fn partition_report_writes_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.toml", CONFIG);
    let out = run(&[
        "partition-report",
        "--config",
        &config,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{out:?}");
    let report = std::fs::read_to_string(dir.path().join("cli-test.partition.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next().unwrap(), "client,size,js,c0,c1,c2");
    assert_eq!(lines.count(), 5); // one row per client
}
