use std::path::Path;
use std::process::{Command, Output};

fn slowfast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slowfast"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "bad JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

#[test]
fn freeze_emits_single_json_line() {
    let out = slowfast(&[
        "freeze",
        "--t",
        "1",
        "--x",
        "1",
        "--burn-in",
        "1",
        "--sample-time",
        "5",
        "--chains",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1);
    let v = stdout_json(&out);
    for key in [
        "t",
        "x",
        "bbar",
        "stderr",
        "chains",
        "burn_in",
        "sample_time",
        "model_fingerprint",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["chains"], 4);
}

#[test]
fn validation_failures_exit_with_2() {
    let out = slowfast(&["converge", "--eps", "0.01,0.1", "--paths", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let out = slowfast(&["converge", "--eps", "2", "--paths", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let out = slowfast(&["check", "--condition", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    let out = slowfast(&["freeze", "--t", "1", "--x", "1,2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_reports_pass_and_counterexample() {
    let out = slowfast(&[
        "check",
        "--condition",
        "ak:16",
        "--box",
        "50",
        "--samples",
        "20000",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["pass"], true);
    let out = slowfast(&[
        "check",
        "--condition",
        "ak:17",
        "--box",
        "50",
        "--samples",
        "20000",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let v = stdout_json(&out);
    assert_eq!(v["pass"], false);
    assert!(v["witness"]["y"].is_array());
}

#[test]
fn converge_writes_reports_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    std::fs::write(
        &config,
        r#"
[model]
name = "example2"
x0 = [1.0]
y0 = [1.0]

[kernel]
h_slow = 0.01

[averaging]
provider = "analytic"

[harness]
eps = [0.2, 0.1, 0.05]
n_paths = 4
seed = 3
"#,
    )
    .unwrap();
    let run = |out: &Path, workers: &str| {
        slowfast(&[
            "converge",
            "--config",
            config.to_str().unwrap(),
            "--workers",
            workers,
            "--output",
            out.to_str().unwrap(),
        ])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = run(&a, "1");
    // Four paths cannot separate the levels: the run completes but is rejected.
    assert!(matches!(out.status.code(), Some(0) | Some(3)));
    run(&b, "2");
    let ra = std::fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("report.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["config"]["harness"]["seed"], 3);
    let csv = std::fs::read_to_string(a.join("errors.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("eps,mean_error,stderr,n_paths,explosions")
    );
}

#[test]
fn table_build_then_inspect_then_converge() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("bbar.csv");
    let out = slowfast(&[
        "avg-table",
        "build",
        "--table",
        table.to_str().unwrap(),
        "--t-points",
        "3",
        "--x-points",
        "9",
        "--box-lo=-1",
        "--box-hi",
        "3",
        "--sample-time",
        "2",
        "--burn-in",
        "0.5",
        "--h",
        "0.01",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let built = stdout_json(&out);
    assert_eq!(built["nodes"], 27);

    let out = slowfast(&["avg-table", "inspect", table.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["header"]["fingerprint"], built["fingerprint"]);

    let out = slowfast(&[
        "converge",
        "--eps",
        "0.2,0.1,0.05",
        "--paths",
        "3",
        "--h-slow",
        "0.01",
        "--provider",
        "table",
        "--table",
        table.to_str().unwrap(),
        "--output",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(matches!(out.status.code(), Some(0) | Some(3)));

    // Same table, different model: refused.
    let out = slowfast(&[
        "converge",
        "--lambda1",
        "1",
        "--eps",
        "0.2,0.1,0.05",
        "--paths",
        "3",
        "--provider",
        "table",
        "--table",
        table.to_str().unwrap(),
        "--output",
        dir.path().join("out2").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_prints_csv_path() {
    let out = slowfast(&["simulate", "--eps", "0.1", "--h-slow", "0.01"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x0,y0,w1_0"));
    assert_eq!(lines.count(), 101);
}

#[test]
fn explicit_scheme_explosion_exits_with_4() {
    let out = slowfast(&[
        "simulate",
        "--eps",
        "0.1",
        "--h-slow",
        "0.1",
        "--scheme",
        "explicit",
        "--x0",
        "50",
        "--horizon",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn rescale_and_khasminskii_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = slowfast(&[
        "rescale-test",
        "--paths",
        "500",
        "--output",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert!(matches!(out.status.code(), Some(0) | Some(3)));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("r/report.json")).unwrap()).unwrap();
    assert_eq!(report["points"].as_array().unwrap().len(), 10);

    let out = slowfast(&[
        "khasminskii",
        "--eps",
        "0.05",
        "--delta",
        "0.5,0.1",
        "--paths",
        "4",
        "--h-slow",
        "0.01",
        "--output",
        dir.path().join("k").to_str().unwrap(),
    ]);
    assert!(matches!(out.status.code(), Some(0) | Some(3)));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("k/report.json")).unwrap()).unwrap();
    assert_eq!(report["levels"].as_array().unwrap().len(), 2);
}
