//! End-to-end checks of the command-line surface: exit codes, artifact
//! layout, and byte-stable reruns.

use std::path::Path;
use std::process::{Command, Output};

fn featflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featflow"))
        .args(args)
        .env("FEATFLOW_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, want: i32) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(want), "stderr: {stderr}");
}

#[test]
fn help_and_version_succeed() {
    assert_code(&featflow(&["--help"]), 0);
    assert_code(&featflow(&["--version"]), 0);
    assert_code(&featflow(&["infer", "--help"]), 0);
}

#[test]
fn usage_errors_exit_two() {
    assert_code(&featflow(&["train", "--bogus"]), 2);
    assert_code(&featflow(&["no-such-command"]), 2);
    // Well-formed flags, bad values.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");
    assert_code(
        &featflow(&["speedup", "--r", "-1", "--l", "5", "--out", out.to_str().unwrap()]),
        2,
    );
    assert_code(&featflow(&["flops", "--arch", "nonsense"]), 2);
    assert_code(&featflow(&["flops", "--res", "axb"]), 2);
}

#[test]
fn missing_model_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_tiny_data(&data);
    let out = featflow(&[
        "infer",
        "--video",
        data.to_str().unwrap(),
        "--nets",
        dir.path().join("nowhere").to_str().unwrap(),
        "--out",
        dir.path().join("t.json").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

fn gen_tiny_data(data: &Path) {
    let out = featflow(&[
        "gen-data",
        "--out",
        data.to_str().unwrap(),
        "--height",
        "32",
        "--width",
        "32",
        "--snippets",
        "2",
        "--frames",
        "6",
        "--annotation-period",
        "2",
        "--max-shapes",
        "3",
    ]);
    assert_code(&out, 0);
}

fn train_tiny(data: &Path, model: &Path, mode: &str, iters: &str, lr: &str) -> Output {
    featflow(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--mode",
        mode,
        "--iters",
        iters,
        "--lr",
        lr,
        "--batch",
        "1",
        "--max-offset",
        "2",
        "--feature-width",
        "8",
    ])
}

#[test]
fn pipeline_round_trip_with_byte_stable_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    let trace = dir.path().join("trace.json");
    gen_tiny_data(&data);
    assert_code(&train_tiny(&data, &model, "dff", "4", "0.05"), 0);
    for piece in ["meta.json", "train_report.json", "run.json"] {
        assert!(model.join(piece).exists(), "missing {piece}");
    }

    let infer_args = [
        "infer",
        "--video",
        data.to_str().unwrap(),
        "--nets",
        model.to_str().unwrap(),
        "--schedule",
        "fixed:3",
        "--variant",
        "dff",
        "--out",
        trace.to_str().unwrap(),
    ];
    assert_code(&featflow(&infer_args), 0);
    let first = std::fs::read(&trace).unwrap();
    assert!(trace.with_file_name("trace.json.timing.json").exists());
    let manifest = trace.with_file_name("trace.json.run.json");
    let body: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
    assert_eq!(body["command"], "infer");
    assert_eq!(body["outputs"][0], trace.to_str().unwrap());

    // A rerun of the recorded invocation reproduces the trace exactly.
    assert_code(&featflow(&infer_args), 0);
    assert_eq!(first, std::fs::read(&trace).unwrap(), "trace changed across reruns");

    // The trace carries one probability map per frame.
    let parsed: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(parsed["frames"].as_array().unwrap().len(), 6);
    assert_eq!(parsed["frames"][0]["is_key"], true);
}

#[test]
fn divergent_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_tiny_data(&data);
    let out = train_tiny(&data, &dir.path().join("m"), "frame", "20", "1e9");
    assert_code(&out, 3);
}

#[test]
fn flops_table_reports_six_pairings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.json");
    let run = featflow(&[
        "flops",
        "--arch",
        "ratio-table",
        "--res",
        "600x1000",
        "--surcharge",
        "0.31",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&run, 0);
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 6);
}

#[test]
fn speedup_values_match_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("speedup.json");
    let run = featflow(&[
        "speedup",
        "--inv-r",
        "9.2",
        "--l-range",
        "1..3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&run, 0);
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let r = 1.0 / 9.2f64;
    for (i, row) in rows.iter().enumerate() {
        let l = (i + 1) as f64;
        let expect = l / (1.0 + (l - 1.0) * r);
        assert!((row["speedup"].as_f64().unwrap() - expect).abs() < 1e-12);
    }
}

#[test]
fn sweep_writes_sorted_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    let csv = dir.path().join("sweep.csv");
    gen_tiny_data(&data);
    assert_code(&train_tiny(&data, &model, "frame", "2", "0.05"), 0);
    let run = featflow(&[
        "sweep",
        "--data",
        data.to_str().unwrap(),
        "--nets",
        model.to_str().unwrap(),
        "--variants",
        "frame,dff",
        "--l",
        "3,2",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_code(&run, 0);
    let body = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines.len(), 4, "header + 3 rows: {body}");
    assert!(lines[1].starts_with("dff,2,"));
    assert!(lines[2].starts_with("dff,3,"));
    assert!(lines[3].starts_with("frame,1,"));
}
