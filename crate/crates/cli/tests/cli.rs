use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_survdisc"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("SURVDISC_THREADS").output().unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn sim_config(m: usize) -> Value {
    json!({
        "m": m,
        "baseline": {"type": "weibull", "shape": 1.3, "scale": 2.0},
        "beta": [0.7, -0.4],
        "covariates": [
            {"name": "age", "type": "standard_normal"},
            {"name": "flag", "type": "bernoulli", "p": 0.4}
        ],
        "censoring": {"type": "independent_exponential", "rate": 0.2},
        "group_rule": {"type": "multinomial", "labels": ["A", "B", "C"], "weights": [0.5, 0.3, 0.2]},
        "seed": 7
    })
}

fn simulate(dir: &Path, m: usize, seed: Option<&str>) -> PathBuf {
    let cfg = write_json(dir, "sim.json", &sim_config(m));
    let out = dir.join("sim");
    let mut args = vec!["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    if let Some(s) = seed {
        args.extend(["--seed", s]);
    }
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn simulate_writes_header_and_rows() {
    let dir = TempDir::new().unwrap();
    let out = simulate(dir.path(), 10, None);
    let text = fs::read_to_string(out.join("cohort.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0], "id,time,event,group,age,flag");
    let truth: Value = serde_json::from_str(&fs::read_to_string(out.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["true_hazards"]["rates"].as_object().unwrap().len(), 10);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn simulate_is_byte_identical_and_seed_overrides() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    let x = fs::read(simulate(a.path(), 50, None).join("cohort.csv")).unwrap();
    let y = fs::read(simulate(b.path(), 50, None).join("cohort.csv")).unwrap();
    assert_eq!(x, y);
    let z_dir = simulate(c.path(), 50, Some("8"));
    assert_ne!(fs::read(z_dir.join("cohort.csv")).unwrap(), x);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(z_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 8);
}

#[test]
fn malformed_config_exits_two() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\"m\": 10, \"baseline\": ").unwrap();
    let out = dir.path().join("o");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());

    let invalid = write_json(dir.path(), "neg.json", &json!({"m": 10, "baseline": {"type": "exponential", "rate": -1.0}}));
    let o = run(&["simulate", "--config", invalid.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let unknown = write_json(dir.path(), "eval.json", &json!({"study": {"replicates": 3, "bogus": 1}}));
    let o = run(&["evaluate", "--config", unknown.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

fn evaluate(dir: &Path, cohort: &Path) -> (PathBuf, Output) {
    let cfg = write_json(
        dir,
        "eval.json",
        &json!({"study": {"replicates": 4, "seed": 3, "follow_up_horizon": 6.0}}),
    );
    let out = dir.join("eval");
    let o = run(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--cohort",
        cohort.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    (out, o)
}

#[test]
fn evaluate_outputs_are_consistent() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), 300, None);
    let (out, o) = evaluate(dir.path(), &sim.join("cohort.csv"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "report.json", "summary.csv", "tables.md"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let scenario = &report["scenarios"][0];
    let replicates = scenario["result"]["replicates"].as_array().unwrap();
    assert_eq!(replicates.len(), 4);
    for r in replicates {
        let rep = &r["report"];
        let ci = rep["ci"].as_f64().unwrap();
        let eci = rep["eci"].as_f64().unwrap();
        if let Some(dr) = rep["dr"].as_f64() {
            assert!((dr - (ci - 0.5) / (eci - 0.5)).abs() < 1e-12);
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for g in rep["per_group"].as_array().unwrap() {
            if let Some(s) = g["subci"].as_f64() {
                let w = g["pair_count"].as_f64().unwrap();
                num += w * s;
                den += w;
            }
        }
        assert!((num / den - ci).abs() < 1e-9, "{} vs {ci}", num / den);
    }

    // summary.csv carries the report.json values rounded to three decimals.
    let summary = &scenario["result"]["summary"];
    let mut rdr = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let find = |group: &str, metric: &str| rows.iter().find(|r| &r[1] == group && &r[2] == metric).unwrap().clone();
    let ci_row = find("", "ci");
    assert_eq!(&ci_row[4], format!("{:.3}", summary["ci"]["mean"].as_f64().unwrap()));
    assert_eq!(&ci_row[6], format!("{:.3}", summary["ci"]["ci95"][0].as_f64().unwrap()));
    let eci_row = find("", "eci");
    assert_eq!(&eci_row[5], format!("{:.3}", summary["eci"]["sd"].as_f64().unwrap()));
    for g in summary["per_group"].as_array().unwrap() {
        let label = g["label"].as_str().unwrap();
        if let Some(m) = g["subci"]["mean"].as_f64() {
            assert_eq!(&find(label, "subci")[4], format!("{m:.3}"));
        }
    }
    let tables = fs::read_to_string(out.join("tables.md")).unwrap();
    assert!(tables.contains("| all | "));
    assert!(tables.contains("| all | B | "));

    // The report command re-renders identical tables.
    let again = dir.path().join("again");
    let o = run(&["report", "--input", out.join("report.json").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(again.join("tables.md")).unwrap(), fs::read(out.join("tables.md")).unwrap());
    assert_eq!(fs::read(again.join("summary.csv")).unwrap(), fs::read(out.join("summary.csv")).unwrap());
}

#[test]
fn bad_cohort_row_exits_two_without_results() {
    let dir = TempDir::new().unwrap();
    let cohort = dir.path().join("c.csv");
    fs::write(&cohort, "id,time,event,group\na,1,1,g\nb,2,maybe,g\n").unwrap();
    let (out, o) = evaluate(dir.path(), &cohort);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 3"));
    assert!(!out.join("report.json").exists());
}

#[test]
fn runtime_failure_removes_partial_outputs() {
    let dir = TempDir::new().unwrap();
    // Every member censored: parses fine, but no model can be fit.
    let mut text = String::from("id,time,event,group,z\n");
    for i in 0..20 {
        text.push_str(&format!("m{i},{},0,g,{}\n", i + 1, i % 3));
    }
    let cohort = dir.path().join("c.csv");
    fs::write(&cohort, text).unwrap();
    let (out, o) = evaluate(dir.path(), &cohort);
    assert_ne!(o.status.code(), Some(0));
    assert!(out.join("manifest.json").exists());
    for f in ["report.json", "summary.csv", "tables.md"] {
        assert!(!out.join(f).exists(), "{f}");
    }
}

#[test]
fn sweep_rows_and_duplicate_rejection() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), 200, None);
    let cfg = write_json(
        dir.path(),
        "sweep.json",
        &json!({"cohort": "sim/cohort.csv", "study": {"replicates": 3, "seed": 1}, "fractions": [0.3, 0.5, 0.7]}),
    );
    let out = dir.path().join("sweep");
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().filter(|r| &r[6] == "1").count(), 1);
    for r in &rows {
        r[1].parse::<f64>().unwrap();
    }
    assert!(fs::read_to_string(out.join("sweep.md")).unwrap().contains("Smallest sd"));

    let dup = dir.path().join("dup");
    let o = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--cohort",
        sim.join("cohort.csv").to_str().unwrap(),
        "--fractions",
        "0.3,0.5,0.5",
        "--out",
        dup.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dup.join("sweep.csv").exists());
}

#[test]
fn threads_from_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(dir.path(), "sim.json", &sim_config(5));
    let out = dir.path().join("o");
    let o = bin()
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("SURVDISC_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin()
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("SURVDISC_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
}
