use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ccr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccr")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Step function sampled on a regular 1-D grid: `1` below 0.5, `3` above.
fn step_data(dir: &Path, n: usize) -> PathBuf {
    let mut s = String::from("x,y\n");
    for i in 0..n {
        let x = (i as f64 + 0.5) / n as f64;
        s.push_str(&format!("{x},{}\n", if x < 0.5 { 1.0 } else { 3.0 }));
    }
    let path = dir.join("step.csv");
    fs::write(&path, s).unwrap();
    path
}

fn f2_data(dir: &Path, name: &str, n: usize, offset: f64) -> PathBuf {
    let mut s = String::new();
    for i in 0..n {
        let x = -1.0 + 2.0 * (i as f64 + offset) / n as f64;
        let y = if x < 0.0 { x + 1.0 } else { x };
        s.push_str(&format!("{x},{y}\n"));
    }
    let path = dir.join(name);
    fs::write(&path, s).unwrap();
    path
}

const FOREST: [&str; 4] = ["--classifier", "forest", "--regressor", "forest"];

#[test]
fn fit_writes_model_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = f2_data(tmp.path(), "f2.csv", 200, 0.5);
    let model = tmp.path().join("model.json");
    let mut args = vec!["fit", "--data", p(&data), "--clusters", "2", "--out", p(&model)];
    args.extend(FOREST);
    let o = ccr(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(model.exists());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["inputs"][0]["hash"].as_str().unwrap().len(), 64);
    assert!(manifest["started"].is_string() && manifest["finished"].is_string());
    assert_eq!(manifest["config"]["clusters"], 2);
}

#[test]
fn fit_usage_errors() {
    let o = ccr(&["fit", "--clusters", "2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let tmp = tempfile::tempdir().unwrap();
    let data = f2_data(tmp.path(), "f2.csv", 50, 0.5);
    let o = ccr(&["fit", "--data", p(&data), "--clusters", "0", "--out", p(tmp.path())]);
    assert_eq!(code(&o), 2);
    let o = ccr(&["fit", "--data", p(&tmp.path().join("missing.csv")), "--out", p(tmp.path())]);
    assert_eq!(code(&o), 2);
    let o = ccr(&["fit", "--data", p(&data), "--classifier", "svm"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn fit_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = f2_data(tmp.path(), "tiny.csv", 5, 0.5);
    let o = ccr(&["fit", "--data", p(&data), "--clusters", "2", "--out", p(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(!stderr(&o).is_empty());
}

#[test]
fn evaluate_perfect_fit_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = step_data(tmp.path(), 40);
    let run = tmp.path().join("run");
    let mut args = vec!["fit", "--data", p(&data), "--clusters", "2", "--out", p(&run)];
    args.extend(FOREST);
    assert_eq!(code(&ccr(&args)), 0);
    let model = run.join("model.json");
    let eval = tmp.path().join("eval");
    let o = ccr(&["evaluate", "--model", p(&model), "--data", p(&data), "--out", p(&eval)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("1.0000"), "{text}");
    let metrics: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(metrics["l2"], 1.0);
    let rows = fs::read_to_string(eval.join("predictions.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 40);
    let bins = fs::read_to_string(eval.join("residuals.csv")).unwrap().lines().count() - 1;
    assert_eq!(bins, 50);
    assert!(eval.join("metrics.json").exists() && eval.join("manifest.json").exists());

    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let o = ccr(&["evaluate", "--model", p(&model), "--data", p(&empty), "--out", p(&eval)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn predict_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = f2_data(tmp.path(), "f2.csv", 100, 0.5);
    let run = tmp.path().join("run");
    let mut args = vec!["fit", "--data", p(&data), "--clusters", "2", "--out", p(&run)];
    args.extend(FOREST);
    assert_eq!(code(&ccr(&args)), 0);
    let xs = tmp.path().join("xs.csv");
    fs::write(&xs, "-0.5\n0.25\n0.75\n").unwrap();
    let o = ccr(&["predict", "--model", p(&run.join("model.json")), "--data", p(&xs), "--out", p(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(run.join("predictions.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x1,prediction,class");
    assert_eq!(lines.len(), 4);
    let pred: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
    assert!((pred - 0.25).abs() < 0.05, "{pred}");
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "1,2,3\n").unwrap();
    let o = ccr(&["predict", "--model", p(&run.join("model.json")), "--data", p(&bad), "--out", p(&run)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let data = f2_data(tmp.path(), "f2.csv", 120, 0.5);
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"clusters": 3, "classifier": "forest", "regressor": "forest", "seed": 4}"#).unwrap();
    let a = tmp.path().join("a");
    assert_eq!(code(&ccr(&["fit", "--data", p(&data), "--config", p(&cfg), "--out", p(&a)])), 0);
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["regressors"].as_array().unwrap().len(), 3);
    assert_eq!(model["config"]["seed"], 4);
    let b = tmp.path().join("b");
    assert_eq!(code(&ccr(&["fit", "--data", p(&data), "--config", p(&cfg), "--clusters", "2", "--out", p(&b)])), 0);
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["regressors"].as_array().unwrap().len(), 2);

    fs::write(&cfg, r#"{"clustres": 3}"#).unwrap();
    assert_eq!(code(&ccr(&["fit", "--data", p(&data), "--config", p(&cfg), "--out", p(&b)])), 2);
}

#[test]
fn identical_runs_give_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = f2_data(tmp.path(), "f2.csv", 150, 0.3);
    let mut outs = Vec::new();
    for name in ["r1", "r2"] {
        let dir = tmp.path().join(name);
        let o = ccr(&["fit", "--data", p(&data), "--clusters", "2", "--seed", "9", "--out", p(&dir)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outs.push(dir);
    }
    for f in ["metrics.json", "model.json"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn active_history() {
    let tmp = tempfile::tempdir().unwrap();
    let zero = tmp.path().join("zero");
    let mut args = vec![
        "active", "--example", "2", "--budget", "0", "--initial-size", "30", "--reservoir-size", "100", "--test-size",
        "50", "--out", p(&zero),
    ];
    args.extend(FOREST);
    let o = ccr(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let hist = fs::read_to_string(zero.join("history.jsonl")).unwrap();
    assert_eq!(hist.lines().count(), 1);

    let run = tmp.path().join("run");
    let mut args = vec![
        "active", "--example", "2", "--strategy", "boundary", "--score", "margin", "--budget", "7", "--refit-every",
        "3", "--initial-size", "30", "--test-size", "50", "--out", p(&run),
    ];
    args.extend(FOREST);
    let o = ccr(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let hist = fs::read_to_string(run.join("history.jsonl")).unwrap();
    let entries: Vec<serde_json::Value> = hist.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 7 / 3 + 1);
    for (k, e) in entries.iter().enumerate() {
        assert_eq!(e["step"], k);
        for key in ["n_train", "l2", "r2", "rmse", "strategy", "points_added"] {
            assert!(e.get(key).is_some(), "{key}");
        }
    }
    assert_eq!(entries[2]["n_train"], 36);

    let o = ccr(&["active", "--example", "2", "--strategy", "committee", "--out", p(&run)]);
    assert_eq!(code(&o), 2);
    let o = ccr(&["active", "--strategy", "hull", "--out", p(&run)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn active_with_labeled_reservoir() {
    let tmp = tempfile::tempdir().unwrap();
    let initial = f2_data(tmp.path(), "init.csv", 30, 0.5);
    let pool = f2_data(tmp.path(), "pool.csv", 90, 0.25);
    let test = f2_data(tmp.path(), "test.csv", 40, 0.75);
    let run = tmp.path().join("run");
    let mut args = vec![
        "active", "--data", p(&initial), "--test", p(&test), "--reservoir", p(&pool), "--budget", "10", "--refit-every",
        "5", "--clusters", "2", "--out", p(&run),
    ];
    args.extend(FOREST);
    let o = ccr(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let hist = fs::read_to_string(run.join("history.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(hist.lines().last().unwrap()).unwrap();
    assert_eq!(last["n_train"], 40);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
}

#[test]
fn benchmark_appends_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    for seed in ["0", "1"] {
        let o = ccr(&["benchmark", "--example", "3", "--seed", seed, "--out", p(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("L2"));
    }
    let table = fs::read_to_string(out.join("results.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("3,f3,0,2000,train,2000,"));
    let l2: f64 = lines[1].split(',').nth(6).unwrap().parse().unwrap();
    assert!(l2 > 0.98, "{l2}");
    for f in ["model.json", "metrics.json", "predictions.csv", "residuals.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(code(&ccr(&["benchmark", "--out", p(&out)])), 2);
    assert_eq!(code(&ccr(&["benchmark", "--example", "6", "--out", p(&out)])), 2);
}

#[test]
fn benchmark_table2_reports_both_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t2");
    let o = ccr(&["benchmark", "--table2", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(rows[0]["mode"], "active");
    assert_eq!(rows[0]["n"], 150);
    assert_eq!(rows[1]["mode"], "passive");
    assert_eq!(rows[1]["n"], 1000);
    assert_eq!(fs::read_to_string(out.join("history.jsonl")).unwrap().lines().count(), 11);
}

#[test]
fn thread_variable_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_ccr"))
        .args(["benchmark", "--example", "3"])
        .env("CCR_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
