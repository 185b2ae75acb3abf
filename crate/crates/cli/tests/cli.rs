use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use betamix::io::AnalysisConfig;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_betamix");

fn manifest(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().expect("binary runs")
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_schema_valid(v: &Value) {
    let schema: Value = read_json(manifest("schema/summary.schema.json"));
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    if let Err(errors) = compiled.validate(v) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("schema violations: {msgs:?}\n{v:#}");
    };
}

fn csv_rows(path: impl AsRef<Path>) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn example_config_matches_golden_and_defaults() {
    let text = fs::read_to_string(manifest("config/analysis.toml")).unwrap();
    let cfg: AnalysisConfig = toml::from_str(&text).unwrap();
    assert_eq!(cfg, AnalysisConfig::default(), "the shipped example documents the defaults");
    let resolved = toml::to_string(&cfg).unwrap();
    let golden = fs::read_to_string(manifest("tests/golden/analysis.resolved.toml")).unwrap();
    assert_eq!(resolved, golden);
    let back: AnalysisConfig = toml::from_str(&golden).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn fit_writes_marginals_and_valid_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["fit", "--out-dir", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.path().join("out");
    let mut names: Vec<String> =
        fs::read_dir(out_dir.join("marginals")).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["Intercept.csv", "income.csv", "phi.csv", "sizeMedium.csv", "sizeSmall.csv", "tau1_sq.csv"]);
    let rows = csv_rows(out_dir.join("marginals/phi.csv"));
    assert_eq!(rows[0], "x,density");
    assert_eq!(rows.len(), 402);
    assert_eq!(csv_rows(out_dir.join("cpo.csv")).len(), 366);
    let summary = read_json(out_dir.join("summary.json"));
    assert_schema_valid(&summary);
    assert_eq!(summary["status"], "ok");
    assert_eq!(summary["data"]["rows"], 365);
    assert_eq!(summary["data"]["groups"], 8);
    assert_eq!(summary["parameters"].as_array().unwrap().len(), 6);
    assert!(summary["criteria"]["dic"].is_number());
    for f in summary["files"].as_array().unwrap() {
        assert!(out_dir.join(f.as_str().unwrap()).is_file(), "{f} listed but missing");
    }
}

#[test]
fn fit_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        assert!(run(&["fit", "--seed", "7", "--out-dir", d], dir.path()).status.success());
    }
    let strip = |d: &str| {
        let mut v = read_json(dir.path().join(d).join("summary.json"));
        v["timings"] = Value::Null;
        v["details"]["engine_secs"] = Value::Null;
        v
    };
    assert_eq!(strip("a"), strip("b"));
    assert_eq!(strip("a")["seed"], 7);
    for f in ["marginals/income.csv", "marginals/tau1_sq.csv", "cpo.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn null_model_from_config_has_two_marginals() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m1.toml"), "[model]\nfixed = []\nrandom = \"none\"\n").unwrap();
    let out = run(&["--config", "m1.toml", "fit", "--out-dir", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(dir.path().join("out/marginals")).unwrap().count(), 2);
}

#[test]
fn sensitivity_tau_scan_has_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sensitivity", "--param", "tau", "--targets", "0.1,0.2,0.3,0.4,0.5,0.6", "--out-dir", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(dir.path().join("out/sensitivity.csv"));
    assert_eq!(rows[0], "prior,shape,rate,prior_h,posterior_h,ratio");
    assert_eq!(rows.len(), 7);
    let h: Vec<f64> = rows[1..].iter().map(|r| r.rsplit(',').nth(2).unwrap().parse().unwrap()).collect();
    for (got, want) in h.iter().zip([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]) {
        assert!((got - want).abs() < 1e-6);
    }
    assert!(rows[1].starts_with("\"Ga(0.5, "));
    let summary = read_json(dir.path().join("out/summary.json"));
    assert_schema_valid(&summary);
    assert_eq!(csv_rows(dir.path().join("out/sensitivity_summary.csv")).len(), 7);
}

#[test]
fn elicit_prints_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["elicit", "--range", "0.6931", "--df", "1", "--out-dir", "out"], dir.path());
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "shape 0.5, rate 0.001488");
    let summary = read_json(dir.path().join("out/summary.json"));
    assert_schema_valid(&summary);
    assert!((summary["details"]["rate"].as_f64().unwrap() - 0.001487).abs() < 1e-5);
}

#[test]
fn simulate_then_fit_csv_through_relative_config_path() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["simulate", "--sizes", "20,20,20,20", "--seed", "3", "--out-dir", "sim"], dir.path()).status.success());
    let summary = read_json(dir.path().join("sim/summary.json"));
    assert_schema_valid(&summary);
    assert_eq!(summary["data"]["rows"], 80);
    fs::create_dir(dir.path().join("cfg")).unwrap();
    fs::write(
        dir.path().join("cfg/a.toml"),
        "[data]\npath = \"../sim/data.csv\"\nresponse = \"y\"\ngroup = \"group\"\nnumeric = [\"income\"]\n\
         categorical = [\"size\"]\nbaselines = { size = \"Large\" }\n",
    )
    .unwrap();
    let out = run(&["--config", "cfg/a.toml", "fit", "--out-dir", "fit"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(dir.path().join("fit/summary.json"));
    assert_eq!(s["data"]["rows"], 80);
    assert_eq!(s["data"]["groups"], 4);
}

fn stderr_record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let v: Value = serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"));
    assert_schema_valid(&v);
    v
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["fit", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let v = stderr_record(&out);
    assert_eq!(v["status"], "error");
    assert_eq!(v["error"]["kind"], "usage");
}

#[test]
fn config_violation_writes_error_record() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("bad.toml"), "[sensitivity]\ntargets = [0.4, 0.2]\n").unwrap();
    let out = run(&["--config", "bad.toml", "sensitivity", "--out-dir", "out"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let v = stderr_record(&out);
    assert_eq!(v["error"]["kind"], "config");
    assert_eq!(v["command"], "sensitivity");
    assert_eq!(read_json(dir.path().join("out/error.json")), v);

    fs::write(dir.path().join("typo.toml"), "[laplace]\nzstep = 0.5\n").unwrap();
    let out = run(&["--config", "typo.toml", "fit"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_record(&out)["error"]["message"].as_str().unwrap().contains("zstep"));
}

#[test]
fn bad_response_reports_row_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("d.csv"), "y,g\n0.2,a\n0.5,b\n1.0,a\n").unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "[data]\npath = \"d.csv\"\nresponse = \"y\"\ngroup = \"g\"\n[model]\nfixed = []\nrandom = \"intercept\"\n",
    )
    .unwrap();
    let out = run(&["--config", "c.toml", "fit", "--out-dir", "out"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let v = stderr_record(&out);
    assert_eq!(v["error"]["kind"], "data");
    assert!(v["error"]["message"].as_str().unwrap().contains("row 3"), "{v}");
}
