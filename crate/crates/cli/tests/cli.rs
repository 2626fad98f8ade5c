use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const UNLOADED: &str = r#"{
  "name": "unloaded",
  "v_nominal_kv": 12.47,
  "s_base_kva": 1000,
  "nodes": [
    {"id": 1, "phases": ["a", "b", "c"], "substation": true},
    {"id": 2, "phases": ["a"]},
    {"id": 3, "phases": ["a"]},
    {"id": 4, "phases": ["a"]}
  ],
  "lines": [
    {"from": 1, "to": 2, "phases": ["a"], "z_real": [[0.2]], "z_imag": [[0.4]], "switchable": true},
    {"from": 2, "to": 3, "phases": ["a"], "z_real": [[0.3]], "z_imag": [[0.5]], "switchable": true},
    {"from": 3, "to": 4, "phases": ["a"], "z_real": [[0.3]], "z_imag": [[0.5]], "switchable": true},
    {"from": 2, "to": 4, "phases": ["a"], "z_real": [[0.6]], "z_imag": [[0.9]], "switchable": true, "normally_open": true}
  ]
}"#;

fn gridreconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridreconf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn unloaded_network_opens_every_switch() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("unloaded.json");
    fs::write(&input, UNLOADED).unwrap();
    let out = tmp.path().join("out");
    let run = gridreconf(&[
        "solve",
        "--input",
        input.to_str().unwrap(),
        "--lambda",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let s = summary(&out);
    assert_eq!(s["loss_w"].as_f64().unwrap(), 0.0);
    assert_eq!(s["topology"]["closed_switches"], 0);
    assert_eq!(s["topology"]["open_switches"].as_array().unwrap().len(), 4);
    for file in ["currents.csv", "loss_curve.csv", "deviation.csv"] {
        assert!(out.join(file).exists(), "{file}");
    }
}

#[test]
fn sweep_curve_is_nondecreasing_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let r = gridreconf(&[
            "sweep",
            "--input",
            "builtin:ieee37_test1",
            "--lambda-grid",
            "1:10000:20",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
        files.push(out);
    }
    let curve = csv_rows(&files[0].join("loss_curve.csv"));
    assert_eq!(curve.len(), 20);
    let loss: Vec<f64> = curve.iter().map(|r| r[1].parse().unwrap()).collect();
    for w in loss.windows(2) {
        assert!(w[1] >= w[0] * (1.0 - 1e-8), "{loss:?}");
    }
    for name in ["currents.csv", "loss_curve.csv", "deviation.csv"] {
        assert_eq!(
            fs::read(files[0].join(name)).unwrap(),
            fs::read(files[1].join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn csv_values_have_twelve_significant_digits() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let r = gridreconf(&["solve", "--input", "builtin:baran33", "--lambda", "200", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    let text = fs::read_to_string(out.join("currents.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("lambda_v,line,from,to,phase,current_a"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mantissa = row[5].split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 12, "{}", row[5]);
}

#[test]
fn usage_and_model_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let r = gridreconf(&["solve", "--input", "builtin:missing", "--out", out]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!r.stderr.is_empty());

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"nodes\": []}").unwrap();
    let r = gridreconf(&["solve", "--input", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(r.status.code(), Some(1));

    let r = gridreconf(&["sweep", "--input", "builtin:baran33", "--lambda-grid", "0:10:5", "--out", out]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn solver_failure_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let r = gridreconf(&[
        "solve",
        "--input",
        "builtin:baran33",
        "--lambda",
        "200",
        "--tol",
        "1e-8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(0));
    // voltage window nobody can meet
    let r = gridreconf(&[
        "solve",
        "--input",
        "builtin:ieee37_test1",
        "--voltage",
        "box",
        "--vmin",
        "0.9999999",
        "--vmax",
        "1.0000001",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn validate_prints_worst_residuals() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let r = gridreconf(&["validate", "--seed", "3", "--count", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("prop1=") && stdout.contains("c3="), "{stdout}");
    let s = summary(&out);
    assert!(s["prop"]["worst_prop1"].as_f64().unwrap() <= 1e-4);
    assert!(s["prop"]["worst_prop2"].as_f64().unwrap() <= 1e-4);
}
