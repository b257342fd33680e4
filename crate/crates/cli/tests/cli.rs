use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn csmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csmr"))
        .args(args)
        .env_remove("CSMR_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn simulate_small(dir: &Path, seed: &str) {
    let out = csmr(&[
        "--seed", seed, "simulate", "--case", "1", "--n", "120", "--p", "15", "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_expected_shapes() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "5");
    let csv = fs::read_to_string(tmp.path().join("data.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 17);
    assert_eq!(header[0], "x1");
    assert_eq!(&header[15..], ["y", "z_true"]);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 120);
    for row in &rows {
        let label: usize = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!((1..=2).contains(&label));
    }
    let truth = read_json(&tmp.path().join("truth.json"));
    assert_eq!(truth["beta_true"].as_array().unwrap().len(), 2);
    for s in truth["supports"].as_array().unwrap() {
        let s = s.as_array().unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|j| (1..=15).contains(&j.as_u64().unwrap())));
    }
}

#[test]
fn simulate_case_one_shape() {
    let tmp = TempDir::new().unwrap();
    let out = csmr(&["--seed", "7", "simulate", "--case", "1", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let csv = fs::read_to_string(tmp.path().join("data.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
    assert!(csv.lines().all(|l| l.split(',').count() == 102));
    assert!(csv.starts_with("x1,x2,"));
    assert!(csv.lines().next().unwrap().ends_with(",x100,y,z_true"));
}

#[test]
fn simulate_rejects_invalid_spec() {
    let tmp = TempDir::new().unwrap();
    let out = csmr(&["simulate", "--n", "50", "--p", "10", "--m0", "11", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let out = csmr(&["simulate", "--case", "13", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn fit_evaluate_round_trip() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "11");
    let data = tmp.path().join("data.csv");
    let model = tmp.path().join("model.json");
    let out = csmr(&[
        "--seed", "2", "fit", data.to_str().unwrap(), "--k", "2", "--model-out", model.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_json(&model);
    assert_eq!(m["K"], 2);
    assert_eq!(m["p"], 15);
    let comps = m["components"].as_array().unwrap();
    assert_eq!(comps.len(), 2);
    let pi: f64 = comps.iter().map(|c| c["pi"].as_f64().unwrap()).sum();
    assert!((pi - 1.0).abs() < 1e-9);
    assert!(comps.iter().all(|c| c["sigma2"].as_f64().unwrap() > 0.0));

    let out = csmr(&[
        "evaluate", data.to_str().unwrap(), "--model", model.to_str().unwrap(), "--truth",
        tmp.path().join("truth.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let r = &report["report"];
    for key in ["correlation", "tpr", "tnr", "rand_index"] {
        let v = r[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert!(r["correlation"].as_f64().unwrap() > 0.9);

    let out = csmr(&[
        "evaluate", data.to_str().unwrap(), "--model", model.to_str().unwrap(), "--truth",
        tmp.path().join("truth.json").to_str().unwrap(), "--format", "csv",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "correlation,rmse,tpr,tnr,rand_index,matching");
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn fit_is_byte_deterministic() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "4");
    let data = tmp.path().join("data.csv");
    let run = |name: &str| {
        let path = tmp.path().join(name);
        let out = csmr(&["--seed", "9", "fit", data.to_str().unwrap(), "--k", "2", "--model-out", path.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
        fs::read(path).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    simulate_small(&a, "21");
    let out = Command::new(env!("CARGO_BIN_EXE_csmr"))
        .args(["simulate", "--case", "1", "--n", "120", "--p", "15", "--out", b.to_str().unwrap()])
        .env("CSMR_SEED", "21")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(a.join("data.csv")).unwrap(), fs::read(b.join("data.csv")).unwrap());
}

#[test]
fn single_component_fit() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "3");
    let model = tmp.path().join("m.json");
    let out = csmr(&[
        "fit", tmp.path().join("data.csv").to_str().unwrap(), "--k", "1", "--model-out", model.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_json(&model);
    assert_eq!(m["components"][0]["pi"].as_f64().unwrap(), 1.0);
}

#[test]
fn corrupted_csv_reports_line() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "6");
    let data = tmp.path().join("data.csv");
    let text = fs::read_to_string(&data).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = lines[4].replacen(',', ",abc,", 1);
    fs::write(&data, lines.join("\n")).unwrap();
    let out = csmr(&["fit", data.to_str().unwrap(), "--k", "2", "--model-out", tmp.path().join("m.json").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5"), "{err}");
}

#[test]
fn missing_input_is_io_error() {
    let tmp = TempDir::new().unwrap();
    let out = csmr(&["fit", tmp.path().join("absent.csv").to_str().unwrap(), "--k", "2", "--model-out", "m.json"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&csmr(&["fit"])), 2);
    assert_eq!(code(&csmr(&["select-k", "d.csv", "--k-grid", "0:3", "--out", "x"])), 2);
    assert_eq!(code(&csmr(&["benchmark", "--cases", "14", "--out", "x"])), 2);
}

#[test]
fn select_k_bic_report() {
    let tmp = TempDir::new().unwrap();
    simulate_small(tmp.path(), "8");
    let out_path = tmp.path().join("k.json");
    let out = csmr(&[
        "--seed", "1", "select-k", tmp.path().join("data.csv").to_str().unwrap(), "--k-grid", "1,2",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&out_path);
    let report = &doc["report"];
    assert_eq!(report["candidates"], serde_json::json!([1, 2]));
    let chosen = report["chosen_k"].as_u64().unwrap();
    assert!(chosen == 1 || chosen == 2);
    assert_eq!(report["bic"].as_array().unwrap().len(), 2);
}

#[test]
fn benchmark_outputs_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let out = csmr(&[
            "--seed", "3", "benchmark", "--cases", "1", "--reps", "2", "--threads", "1", "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let a = run("a");
    let b = run("b");
    for f in ["table.csv", "aggregate.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let table = fs::read_to_string(a.join("table.csv")).unwrap();
    // 2 reps times 3 methods plus the header
    assert_eq!(table.lines().count(), 7);
    assert!(a.join("timings.csv").exists());
}
