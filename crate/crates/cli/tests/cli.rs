use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn zrplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zrplab")).args(args).output().expect("binary runs")
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn write_scenario(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const QUICK_TRANSITION: &str = r#"{
  "version": 1,
  "graph": {"complete": {"sites": 2, "rate": 1.0}},
  "alpha": 2.0,
  "ladder": [6, 8, 10],
  "task": "transition-time",
  "params": {"trials": 50},
  "seed": 99
}"#;

#[test]
fn bundled_scenarios_validate_against_the_catalog() {
    let mut seen = 0;
    for entry in fs::read_dir(scenarios_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            continue;
        }
        let out = zrplab(&["check", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}: {}", p.display(), String::from_utf8_lossy(&out.stderr));
        seen += 1;
    }
    assert!(seen >= 10);
}

#[test]
fn catalog_lists_every_task_with_typed_params() {
    let out = zrplab(&["list-tasks"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = v["tasks"].as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
    for t in ["stationary", "gamma-expansion", "condensation-time", "transition-time", "d0", "selftest"] {
        assert!(names.contains(&t), "{t} missing");
    }
    for t in v["tasks"].as_array().unwrap() {
        for p in t["params"].as_array().unwrap() {
            assert!(p["type"].is_string() && p["description"].is_string());
        }
    }
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write_scenario(tmp.path(), "t.json", QUICK_TRANSITION);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let out = zrplab(&["run", s.to_str().unwrap(), "--out", d.to_str().unwrap(), "--jobs", "2"]);
        assert_ne!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["transition_scaling.csv", "transition_scaling.json", "index.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = tmp.path().join("c");
    zrplab(&["run", s.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "100"]);
    assert_ne!(fs::read(a.join("transition_scaling.csv")).unwrap(), fs::read(c.join("transition_scaling.csv")).unwrap());
}

#[test]
fn index_records_artifact_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let s = scenarios_dir().join("stationary.json");
    let out = zrplab(&["run", s.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let index: Value = serde_json::from_slice(&fs::read(out_dir.join("index.json")).unwrap()).unwrap();
    let check = zrplab(&["check", s.to_str().unwrap()]);
    let hash = String::from_utf8(check.stdout).unwrap();
    assert_eq!(index["scenario_sha256"].as_str().unwrap(), hash.split_whitespace().next().unwrap());
    let arts = index["artifacts"].as_array().unwrap();
    assert!(arts.iter().any(|a| a["path"] == "partition.csv"));
    for a in arts {
        let bytes = fs::read(out_dir.join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
        assert_eq!(a["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
}

#[test]
fn toml_and_json_scenarios_share_a_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let json = write_scenario(
        tmp.path(),
        "r.json",
        r#"{"version": 1, "name": "ring of four sites, reduced chain", "graph": {"cycle": {"sites": 4, "rate": 1.0}},
            "alpha": 2.0, "ladder": [10], "task": "reduced-chain", "params": {"convention": "series"}}"#,
    );
    let h = |p: &Path| String::from_utf8(zrplab(&["check", p.to_str().unwrap()]).stdout).unwrap().split_whitespace().next().unwrap().to_string();
    assert_eq!(h(&json), h(&scenarios_dir().join("reduced_chain.toml")));
}

#[test]
fn gamma_expansion_csv_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write_scenario(
        tmp.path(),
        "g.json",
        r#"{"version": 1, "graph": {"complete": {"sites": 2, "rate": 1.0}}, "alpha": 2.0,
            "ladder": [20, 40, 80], "task": "gamma-expansion",
            "params": {"targets": [{"kind": "vertex", "site": 1}, {"kind": "vertex_mix", "masses": [0.6, 0.4]}]}}"#,
    );
    let out_dir = tmp.path().join("out");
    let out = zrplab(&["run", s.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(out_dir.join("gamma_expansion.csv")).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next().unwrap(), "measure_id,scale,N,value,extrapolated,target,rel_err");
    assert_eq!(lines.count(), 2 * 5 * 3);
    let reports: Value = serde_json::from_slice(&fs::read(out_dir.join("gamma_reports.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 10);
}

#[test]
fn threshold_failure_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write_scenario(tmp.path(), "t.json", &QUICK_TRANSITION.replace(r#""trials": 50"#, r#""trials": 50, "expected": [10.0, 11.0]"#));
    let out = zrplab(&["run", s.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let index: Value = serde_json::from_slice(&fs::read(tmp.path().join("o/index.json")).unwrap()).unwrap();
    assert_eq!(index["passed"], false);
}

#[test]
fn unknown_task_prints_catalog_and_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write_scenario(tmp.path(), "t.json", &QUICK_TRANSITION.replace("transition-time", "teleport"));
    let out = zrplab(&["run", s.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown task"));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["tasks"].is_array());
}

#[test]
fn bad_parameters_and_oversized_spaces_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write_scenario(tmp.path(), "t.json", &QUICK_TRANSITION.replace(r#""trials": 50"#, r#""trials": "many""#));
    let out = zrplab(&["run", s.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trials"));

    let big = write_scenario(
        tmp.path(),
        "big.json",
        r#"{"version": 1, "graph": {"complete": {"sites": 6, "rate": 1.0}}, "alpha": 2.0,
            "ladder": [400], "task": "stationary"}"#,
    );
    let out = zrplab(&["run", big.to_str().unwrap(), "--out", tmp.path().join("b").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ZRPLAB_CAP_STATES"));
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = zrplab(&["selftest", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(tmp.path().join("selftest.csv").exists());
}
