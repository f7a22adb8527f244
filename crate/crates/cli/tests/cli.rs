use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn instance(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../instances").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_routeage"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn solve_deterministic_route() {
    let cfg = instance("deterministic.json");
    let o = run(&["solve", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let line = stdout(&o).lines().next().unwrap().to_owned();
    let lambda: f64 = line.trim_start_matches("λ* = ").parse().unwrap();
    assert!((lambda - 1.5).abs() < 1e-3, "{line}");
}

#[test]
fn solve_writes_json_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sol.json");
    let trace = dir.path().join("trace.csv");
    let cfg = instance("energy-budget.json");
    let o = run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sol: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert!(sol["lambda"].as_f64().unwrap() > 0.0);
    assert!(std::fs::read_to_string(trace).unwrap().lines().count() > 2);
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"routes\": [").unwrap();
    assert_eq!(run(&["solve", "--config", bad.to_str().unwrap()]).status.code(), Some(2));

    let neg = dir.path().join("neg.json");
    std::fs::write(
        &neg,
        r#"{"routes":[{"delay":{"family":"deterministic","value":1.0},"availability":1.5}]}"#,
    )
    .unwrap();
    assert_eq!(run(&["solve", "--config", neg.to_str().unwrap()]).status.code(), Some(2));

    let missing = dir.path().join("nope.json");
    assert_eq!(run(&["solve", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn infeasible_budget_exits_3() {
    let cfg = instance("infeasible.json");
    let o = run(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn starved_fixed_point_exits_4() {
    let cfg = instance("three-route.json");
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--tol-max-iterations", "1"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn compare_lists_every_policy() {
    let cfg = instance("three-route.json");
    let o = run(&["compare", "--config", cfg.to_str().unwrap(), "--epochs", "2000", "--seed", "3"]);
    assert!(o.status.success());
    let mut reader = csv::Reader::from_reader(o.stdout.as_slice());
    let names: Vec<String> = reader.records().map(|r| r.unwrap()[0].to_owned()).collect();
    assert_eq!(names, ["optimal", "mad-opt", "mad-zw", "mdv-opt", "mdv-zw"]);
}

#[test]
fn sweep_emits_one_row_per_step() {
    let cfg = instance("intermittent-a.json");
    let o = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--var",
        "p:2",
        "--from",
        "0.2",
        "--to",
        "0.8",
        "--steps",
        "2",
        "--policies",
        "optimal,mad-zw",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut reader = csv::Reader::from_reader(o.stdout.as_slice());
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), ["p:2", "optimal", "mad-zw", "warning"]);
    assert_eq!(reader.records().count(), 2);
}

#[test]
fn sweep_rejects_unknown_variable() {
    let cfg = instance("intermittent-a.json");
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--var", "sigma:9", "--from", "0", "--to", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thresholds_round_trip_as_json() {
    let cfg = instance("three-route.json");
    let o = run(&["thresholds", "--config", cfg.to_str().unwrap(), "--policy", "mdv-opt"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["minus"]["states"][0]["unavailable"], "000");
}

#[test]
fn simulate_reports_confidence_interval() {
    let cfg = instance("deterministic.json");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--epochs", "1000", "--policy", "mad-zw"]);
    assert!(o.status.success());
    let mut reader = csv::Reader::from_reader(o.stdout.as_slice());
    let row = reader.records().next().unwrap().unwrap();
    let aoi: f64 = row[3].parse().unwrap();
    assert!((aoi - 1.5).abs() < 2e-3, "{aoi}");
}
