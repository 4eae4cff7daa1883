use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[model]
dimension = 40
forcing = 8.0

[observation]
resolution_stride = 2

[filter]
ensemble_size = 10
inflation = 1.05
localization = 4.0
sigma = 0.3
mode = "perturbation"

[run]
n_cycles = 100
rmse_window = 50
seed = 3
"#;

fn smoothda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smoothda")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_rmse_and_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = smoothda(&["run", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("rmse.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "cycle,time,rmse,spread");
    assert_eq!(lines.len(), 101);
    assert!(lines[1].starts_with("1,0.15,"));
    let m = manifest(&out);
    assert_eq!(m["command"], "run");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config"]["filter"]["ensemble_size"], 10);
    assert!(m["version"].is_string());
    assert!(m["wall_time_secs"].as_f64().unwrap() >= 0.0);
    assert!(m["summary"]["time_averaged_rmse"].as_f64().unwrap() > 0.0);
}

#[test]
fn identical_invocations_give_identical_csv() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(smoothda(&["run", "--config", &cfg, "--out", s(out), "--seed", "11"]).status.code(), Some(0));
    }
    assert_eq!(fs::read(a.join("rmse.csv")).unwrap(), fs::read(b.join("rmse.csv")).unwrap());
    assert_eq!(manifest(&a)["seed"], 11);

    let c = dir.path().join("c");
    assert_eq!(smoothda(&["run", "--config", &cfg, "--out", s(&c), "--seed", "12"]).status.code(), Some(0));
    assert_ne!(fs::read(a.join("rmse.csv")).unwrap(), fs::read(c.join("rmse.csv")).unwrap());
}

#[test]
fn tuning_table_does_not_depend_on_jobs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let grids = ["--rho", "1:1.1:0.05", "--c", "2:4:2", "--sigma", "0.3:0.6:0.3"];
    let mut tables = Vec::new();
    for jobs in ["1", "3"] {
        let out = dir.path().join(format!("jobs{jobs}"));
        let mut args = vec!["tune", "--config", &cfg, "--out", s(&out), "--jobs", jobs];
        args.extend(grids);
        let o = smoothda(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        tables.push(fs::read_to_string(out.join("tuning.csv")).unwrap());
        let m = manifest(&out);
        assert!(m["summary"]["best"]["sigma"].as_f64().unwrap() > 0.0);
    }
    assert_eq!(tables[0], tables[1]);
    let lines: Vec<&str> = tables[0].lines().collect();
    assert_eq!(lines[0], "rho,c,sigma,rmse,diverged");
    // 6 stage-1 cells, 2 kernel widths, 6 stage-3 cells with one repeat
    assert_eq!(lines.len(), 1 + 6 + 2 + 5);
}

#[test]
fn baseline_only_tuning() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = smoothda(&["tune", "--config", &cfg, "--out", s(&out), "--rho", "1.05", "--c", "2:6:2", "--baseline-only"]);
    assert_eq!(o.status.code(), Some(0));
    let table = fs::read_to_string(out.join("tuning.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().skip(1).all(|l| l.split(',').nth(2) == Some("0")));
}

#[test]
fn truth_spectrum_and_diagnose() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);

    let out = dir.path().join("truth");
    assert_eq!(smoothda(&["truth", "--config", &cfg, "--out", s(&out)]).status.code(), Some(0));
    let truth = fs::read_to_string(out.join("truth.csv")).unwrap();
    assert!(truth.lines().next().unwrap().starts_with("cycle,time,u_0,u_1"));
    assert_eq!(truth.lines().count(), 1 + 101);

    let out = dir.path().join("spec");
    let o = smoothda(&["spectrum", "--config", &cfg, "--out", s(&out), "--sizes", "5,10", "--end-time", "1.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let spec = fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert_eq!(spec.lines().next(), Some("ensemble_size,smoothed,wavenumber,power"));
    assert_eq!(spec.lines().count(), 1 + 2 * 2 * 21);

    let out = dir.path().join("diag");
    let o = smoothda(&["diagnose", "--config", &cfg, "--out", s(&out), "--times", "3,6"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let diag = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().next(), Some("time,component,variance_ratio,offdiag_ratio"));
    assert_eq!(diag.lines().count(), 1 + 2 * 40);
    assert_eq!(manifest(&out)["summary"]["snapshots"], 2);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(smoothda(&["bogus"]).status.code(), Some(1));
    assert_eq!(smoothda(&["run"]).status.code(), Some(1));
    assert_eq!(smoothda(&["run", "--config", "/nonexistent/cfg.toml"]).status.code(), Some(1));
    assert_eq!(smoothda(&["--help"]).status.code(), Some(0));
    assert_eq!(smoothda(&["--version"]).status.code(), Some(0));

    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("seed = 3", "seed = 3\nsede = 4"));
    let o = smoothda(&["run", "--config", &cfg, "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sede"));

    let cfg = write_config(dir.path(), SMALL);
    let o = smoothda(&["tune", "--config", &cfg, "--out", s(&dir.path().join("y")), "--rho", "1:a:2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divergence_exits_two_with_partial_results() {
    let dir = TempDir::new().unwrap();
    let text = r#"
[model]
dimension = 128
forcing = 8.0

[observation]
resolution_stride = 2

[filter]
ensemble_size = 20
inflation = 1.15
localization = 8.0
sigma = 0.0
mode = "off"

[run]
seed = 0
"#;
    let cfg = write_config(dir.path(), text);
    let out = dir.path().join("out");
    let o = smoothda(&["run", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m["status"], "diverged");
    assert!(m["summary"]["time_averaged_rmse"].is_null());
    let rows = fs::read_to_string(out.join("rmse.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, m["summary"]["cycles_completed"].as_u64().unwrap() as usize);
    assert!(rows > 0 && rows < 1333);
}
