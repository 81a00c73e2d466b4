use std::path::Path;
use std::process::{Command, Output};

fn hotcold(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hotcold"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HOTCOLD_SEED")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) {
    std::fs::write(
        dir.join("config.json"),
        r#"{"net": {"epochs": 3, "hidden": [8]}, "gbdt": {"n_trees": 10}}"#,
    )
    .unwrap();
}

#[test]
fn generate_train_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    let out = hotcold(&["generate", "--out", "data", "--contents", "400", "--days", "90", "--seed", "3"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("hot base rate"), "{stdout}");
    assert!(d.join("data/contents.jsonl").exists());
    assert!(d.join("data/views.jsonl").exists());

    let out = hotcold(
        &["train", "--data", "data", "--config", "config.json", "--out", "model.json", "--as-of", "2017-03-01"],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let contents = std::fs::read_to_string(d.join("data/contents.jsonl")).unwrap();
    let fresh: Vec<&str> = contents
        .lines()
        .filter(|l| l.contains("\"release_date\":\"2017-03-0"))
        .take(3)
        .collect();
    assert!(!fresh.is_empty());
    std::fs::write(d.join("new.jsonl"), fresh.join("\n") + "\n").unwrap();
    let out = hotcold(
        &["predict", "--model", "model.json", "--new", "new.jsonl", "--catalog", "data", "--at", "2017-03-01"],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<serde_json::Value> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), fresh.len());
    for p in &lines {
        let prob = p["probability"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&prob));
        assert!(p["label"] == "hot" || p["label"] == "cold");
    }

    // scoring after release is a validation error
    let out = hotcold(
        &["predict", "--model", "model.json", "--new", "new.jsonl", "--catalog", "data", "--at", "2017-06-01"],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    assert!(hotcold(&["generate", "--out", "data", "--contents", "400", "--days", "90", "--seed", "5"], d)
        .status
        .success());
    let out = hotcold(&["evaluate", "--data", "data", "--config", "config.json", "--out", "eval"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["model"], "hybrid");
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert!(!report["periods"].as_array().unwrap().is_empty());
}

#[test]
fn window_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    assert!(hotcold(&["generate", "--out", "data", "--contents", "400", "--days", "90", "--seed", "7"], d)
        .status
        .success());
    let out = hotcold(
        &[
            "experiment", "--which", "window-sweep", "--data", "data", "--config", "config.json", "--out", "sweep",
            "--r-values", "1,10", "--routes", "a",
        ],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("sweep/window_sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("route,r,precision,recall,f1,n_periods"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(hotcold(&["train", "--bogus"], d).status.code(), Some(1));
    assert_eq!(hotcold(&["train", "--data", "missing", "--out", "m.json"], d).status.code(), Some(1));
    std::fs::write(d.join("bad.json"), r#"{"seeed": 1}"#).unwrap();
    let out = hotcold(&["evaluate", "--data", "missing", "--config", "bad.json", "--out", "o"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeed"));
    assert_eq!(hotcold(&["generate", "--out", "g", "--contents", "5"], d).status.code(), Some(1));
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    assert!(hotcold(&["--help"], dir.path()).status.success());
    assert!(hotcold(&["--version"], dir.path()).status.success());
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        let o = hotcold(&["generate", "--out", out, "--contents", "200", "--days", "60", "--seed", "1"], d);
        assert!(o.status.success());
    }
    for file in ["contents.jsonl", "views.jsonl"] {
        let a = std::fs::read(d.join("a").join(file)).unwrap();
        let b = std::fs::read(d.join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn seed_flag_wins_over_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |out: &str, env: &str, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_hotcold"));
        cmd.args(["generate", "--out", out, "--contents", "100", "--days", "40"]).current_dir(d).env("HOTCOLD_SEED", env);
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(d.join(out).join("contents.jsonl")).unwrap()
    };
    let env_only = run("e", "8", None);
    let flag = run("f", "9", Some("8"));
    let other = run("o", "9", None);
    assert_eq!(env_only, flag);
    assert_ne!(env_only, other);
}

#[test]
fn missing_route_data_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    let o = hotcold(&["generate", "--out", "data", "--contents", "200", "--days", "60", "--seed", "2", "--type-a-fraction", "0"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = hotcold(&["train", "--data", "data", "--config", "config.json", "--out", "m.json"], d);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("U_A empty"), "{err}");
}

#[test]
fn optimizer_experiment_writes_four_equal_traces() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    assert!(hotcold(&["generate", "--out", "data", "--contents", "300", "--days", "60", "--seed", "4"], d)
        .status
        .success());
    let out = hotcold(&["experiment", "--which", "optimizers", "--data", "data", "--config", "config.json", "--out", "opt"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lens: Vec<usize> = ["ftrl", "adam", "rmsprop", "fobos"]
        .iter()
        .map(|k| std::fs::read_to_string(d.join(format!("opt/loss_{k}.csv"))).unwrap().lines().count())
        .collect();
    assert!(lens.iter().all(|&n| n == lens[0] && n > 2), "{lens:?}");
}
