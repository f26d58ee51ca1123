//! Exit codes and output files of the `keyalloc` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use keyalloc_core::model::default_config_json;
use serde_json::Value;

fn keyalloc(args: &[&str], paths: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_keyalloc"));
    cmd.args(args);
    for p in paths {
        cmd.arg(p);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Default config shrunk to a short day so plans and runs stay quick.
fn write_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(default_config_json()).unwrap();
    v["sim"]["horizon_slots"] = 60.into();
    v["sim"]["scenario_count"] = 2.into();
    v["sim"]["plan_iters"] = 3.into();
    edit(&mut v);
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
    p
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn validate_reports_each_failure_class() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = keyalloc(&["validate"], &[]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("ok "));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{ \"classes\": [").unwrap();
    assert_eq!(code(&keyalloc(&["validate", "--config"], &[&bad])), 2);

    let cfg = write_config(tmp.path(), |v| v["classes"][0]["sla_delay"] = (-1.0).into());
    let o = keyalloc(&["validate", "--config"], &[&cfg]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("sla_delay"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), |v| v["classes"][0]["nodes"][0] = "n99".into());
    let o = keyalloc(&["validate", "--config"], &[&cfg]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("n99"), "{}", stderr(&o));
}

#[test]
fn plan_is_repeatable_and_required() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |_| {});
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    for out in [&a, &b] {
        let o = keyalloc(&["plan", "--seed", "5", "--config"], &[&cfg, Path::new("--out"), out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let plan: Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(plan["domain_quotas"][0].as_array().unwrap().len(), 3);

    let o = keyalloc(&["simulate", "--policy", "proposed", "--config"], &[&cfg]);
    assert_eq!(code(&o), 64, "{}", stderr(&o));

    // A plan built under another seed belongs to another config.
    let o = keyalloc(
        &["simulate", "--policy", "proposed", "--seeds", "1", "--seed", "6", "--config"],
        &[&cfg, Path::new("--plan"), &a, Path::new("--out"), &tmp.path().join("x")],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn single_seed_run_flags_a_degenerate_interval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |_| {});
    let out = tmp.path().join("run");
    let o = keyalloc(&["simulate", "--policy", "static", "--seeds", "1", "--config"], &[&cfg, Path::new("--out"), &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("degenerate"));
    let summary: Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    let rows = summary["policies"][0]["rows"].as_array().unwrap();
    assert!(rows.iter().all(|r| r["degenerate"] == Value::Bool(true)));
    assert_eq!(std::fs::read_dir(out.join("traces")).unwrap().count(), 1);
    assert!(out.join("metrics.csv").exists() && out.join("timing.json").exists());
}

#[test]
fn compare_writes_policies_and_ablations() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |_| {});
    let plan = tmp.path().join("plan.json");
    assert_eq!(code(&keyalloc(&["plan", "--config"], &[&cfg, Path::new("--out"), &plan])), 0);
    let out = tmp.path().join("cmp");
    let o = keyalloc(
        &["compare", "--seeds", "2", "--config"],
        &[&cfg, Path::new("--plan"), &plan, Path::new("--out"), &out],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    let labels: Vec<&str> = summary["policies"].as_array().unwrap().iter().map(|p| p["policy"].as_str().unwrap()).collect();
    for p in ["proposed", "static", "greedy", "no_qkd", "oracle"] {
        assert!(labels.contains(&p), "{labels:?}");
    }
    let ab = csv_rows(&out.join("ablation.csv"));
    assert_eq!(ab.len(), 4);
    assert!(ab.iter().all(|r| r.len() == 8));
}

#[test]
fn sweep_writes_one_row_per_budget_and_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |_| {});
    let out = tmp.path().join("sweep");
    let o = keyalloc(
        &["sweep", "--seeds", "2", "--policies", "static,greedy", "--config"],
        &[&cfg, Path::new("--out"), &out],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&out.join("pareto.csv"));
    assert_eq!(rows.len(), 10);
    for policy in ["static", "greedy"] {
        assert_eq!(rows.iter().filter(|r| r[2] == policy).count(), 5);
    }
    let o = keyalloc(&["sweep", "--budgets", "1.0", "--config"], &[&cfg]);
    assert_eq!(code(&o), 64);
}

#[test]
fn impossible_budget_names_the_slot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |v| {
        for l in v["links"].as_array_mut().unwrap() {
            l["yield_max"] = 0.0.into();
        }
        for n in v["nodes"].as_array_mut().unwrap() {
            n["initial_bits"] = 0.into();
        }
        for c in v["classes"].as_array_mut().unwrap() {
            c["relax_cap"] = 0.0.into();
        }
    });
    let o = keyalloc(&["plan", "--config"], &[&cfg, Path::new("--out"), &tmp.path().join("p.json")]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(msg.contains("scenario") && msg.contains("slot"), "{msg}");
}
