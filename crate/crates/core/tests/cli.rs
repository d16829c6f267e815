use std::fs;
use std::path::Path;
use std::process::Command;

use debias_erm::cli::{run, EXIT_ASSUMPTION, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_OK};
use debias_erm::io::parse_single_column;

const INTERVAL_BIAS: &str = "[[biasing]]\nkind = \"component_band\"\nj = 0\nc = 1.0\n\n[[biasing]]\nkind = \"whole_space\"\n";

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn args<'a>(v: &[&'a str]) -> Vec<&'a str> {
    std::iter::once("debias").chain(v.iter().copied()).collect()
}

#[test]
fn validate_overlapping_strata_passes() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "x0,sample_id\n0.2,0\n0.7,0\n0.5,1\n1.5,1\n");
    let bias = write(dir.path(), "b.toml", INTERVAL_BIAS);
    let out = dir.path().join("out");
    let code = run(args(&["validate", "--data", &data, "--bias", &bias, "--out", out.to_str().unwrap()]));
    assert_eq!(code, EXIT_OK);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["strongly_connected"], true);
}

#[test]
fn validate_disjoint_strata_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "x0,sample_id\n-2,0\n-1.5,0\n1.5,1\n2,1\n");
    let bias = write(
        dir.path(),
        "b.json",
        r#"[{"kind": "component_below", "j": 0, "c": 0.0}, {"kind": "component_above", "j": 0, "c": 0.0}]"#,
    );
    let out = dir.path().join("out");
    let code = run(args(&["validate", "--data", &data, "--bias", &bias, "--out", out.to_str().unwrap()]));
    assert_eq!(code, EXIT_ASSUMPTION);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["strongly_connected"], false);

    let code = run(args(&["solve", "--data", &data, "--bias", &bias, "--out", out.to_str().unwrap()]));
    assert_eq!(code, EXIT_ASSUMPTION);
    let code = run(args(&["solve", "--data", &data, "--bias", &bias, "--out", out.to_str().unwrap(), "--force"]));
    assert_eq!(code, EXIT_OK);
    let res: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(res["non_unique"], true);
    let w = parse_single_column(&fs::read_to_string(out.join("weights.csv")).unwrap()).unwrap();
    assert_eq!(w.len(), 4);
}

#[test]
fn malformed_row_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "x0,sample_id\n0.2,0\nfoo,0\n");
    let bias = write(dir.path(), "b.toml", INTERVAL_BIAS);
    assert_eq!(run(args(&["validate", "--data", &data, "--bias", &bias])), EXIT_INPUT);
    let missing_id = write(dir.path(), "e.csv", "x0\n0.2\n");
    assert_eq!(run(args(&["validate", "--data", &missing_id, "--bias", &bias])), EXIT_INPUT);
}

#[test]
fn solve_writes_weights_in_input_order() {
    let dir = tempfile::tempdir().unwrap();
    // Rows interleave the two samples; the 4-point weights follow the rows.
    let data = write(dir.path(), "d.csv", "x0,sample_id\n1.5,1\n0.2,0\n0.5,1\n0.7,0\n");
    let bias = write(dir.path(), "b.toml", INTERVAL_BIAS);
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    assert_eq!(run(args(&["solve", "--data", &data, "--bias", &bias, "--out", o])), EXIT_OK);
    let w = parse_single_column(&fs::read_to_string(out.join("weights.csv")).unwrap()).unwrap();
    for (a, b) in w.iter().zip([0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0]) {
        assert!((a - b).abs() <= 1e-12, "{w:?}");
    }
    assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    let res: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for key in ["W_hat", "Omega_hat", "weights", "gamma_residual", "iterations", "converged", "non_unique"] {
        assert!(res.get(key).is_some(), "{key}");
    }
}

#[test]
fn no_bias_gives_uniform_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "x0,x1,sample_id\n0,1,0\n1,2,1\n2,0,0\n3,3,1\n4,1,1\n");
    let bias = write(dir.path(), "b.json", r#"{"biasing": [{"kind": "whole_space"}, {"kind": "whole_space"}]}"#);
    let out = dir.path().join("o");
    assert_eq!(run(args(&["weights", "--data", &data, "--bias", &bias, "--out", out.to_str().unwrap()])), EXIT_OK);
    let w = parse_single_column(&fs::read_to_string(out.join("weights.csv")).unwrap()).unwrap();
    assert!(w.iter().all(|x| (x - 0.2).abs() <= 1e-15));
}

#[test]
fn non_convergence_exits_three_with_dump() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "x0,sample_id\n0.2,0\n0.7,0\n0.5,1\n1.5,1\n");
    let bias = write(dir.path(), "b.toml", INTERVAL_BIAS);
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    let code = run(args(&[
        "solve", "--data", &data, "--bias", &bias, "--out", o, "--method", "fixed-step", "--max-iter", "1",
    ]));
    assert_eq!(code, EXIT_NOT_CONVERGED);
    let dump: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(dump["converged"], false);
    assert!(dump["W_hat"].is_array());
}

#[test]
fn fit_writes_model_and_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(
        dir.path(),
        "d.csv",
        "x0,y,sample_id\n0.2,0.4,0\n0.7,1.4,0\n0.9,1.8,0\n0.5,1.0,1\n1.5,3.0,1\n2.5,5.0,1\n",
    );
    let bias = write(dir.path(), "b.toml", INTERVAL_BIAS);
    let out = dir.path().join("o");
    assert_eq!(run(args(&["fit", "--data", &data, "--bias", &bias, "--out", out.to_str().unwrap()])), EXIT_OK);
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    let slope = model["coefficients"][0].as_f64().unwrap();
    assert!((slope - 2.0).abs() < 1e-9);
    let text = fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert!(text.starts_with("y_pred\n"));
    assert_eq!(parse_single_column(&text).unwrap().len(), 6);
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_debias");
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("run{i}"));
        let status = Command::new(bin)
            .args(["simulate", "--preset", "h", "--runs", "1", "--seed", "3", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success());
        outputs.push((fs::read(out.join("experiment.csv")).unwrap(), fs::read(out.join("runs.csv")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn unknown_preset_exits_one() {
    let bin = env!("CARGO_BIN_EXE_debias");
    let status = Command::new(bin).args(["simulate", "--preset", "zz"]).status().unwrap();
    assert_eq!(status.code(), Some(EXIT_INPUT));
}
