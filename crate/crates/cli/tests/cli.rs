use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splitting"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("splitting-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn list_names_the_builtins() {
    let out = run(&["list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["canonical-r4", "so3-star", "heisenberg", "twisted-graph", "gcs-product-shear", "tangent-algebroid"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
    let out = run(&["list", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let entries = v.as_array().unwrap();
    assert!(entries.len() >= 6);
    for e in entries {
        assert!(!e["anchor"].as_str().unwrap().is_empty());
        assert!(!e["description"].as_str().unwrap().is_empty());
    }
}

#[test]
fn canonical_r4_reports_omega_zero() {
    let report = tmp("canonical.json");
    let csv = tmp("canonical.csv");
    let out = run(&[
        "run",
        "canonical-r4",
        "--samples",
        "20",
        "--report",
        report.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["scenario"], "canonical-r4");
    assert_eq!(v["verdict"], true);
    let checks = v["checks"].as_array().unwrap();
    let om = checks.iter().find(|c| c["name"] == "omega_expected").expect("omega entry");
    assert_eq!(om["pass"], true);
    assert!(om["max_residual"].as_f64().unwrap() < 1e-8);
    for c in checks {
        for key in ["name", "anchor", "max_residual", "tol", "pass", "samples"] {
            assert!(c.get(key).is_some(), "{key}");
        }
    }
    let rows = std::fs::read_to_string(&csv).unwrap();
    let mut lines = rows.lines();
    assert_eq!(lines.next().unwrap(), "check,sample,residual,pass,w1,w2,w3,w4");
    let total: u64 = checks.iter().map(|c| c["samples"].as_u64().unwrap()).sum();
    assert_eq!(lines.count() as u64, total);
}

#[test]
fn so3_star_passes() {
    let out = run(&["run", "so3-star", "--samples", "20"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn reports_are_deterministic() {
    let a = run(&["run", "heisenberg", "--samples", "10", "--seed", "7", "--report", "-"]);
    let b = run(&["run", "heisenberg", "--samples", "10", "--seed", "7", "--report", "-"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["run", "heisenberg", "--samples", "10", "--seed", "7", "--report", "-", "--timestamp"]);
    let mut v: serde_json::Value = serde_json::from_slice(&c.stdout).unwrap();
    assert!(v["timestamp"].is_u64());
    v.as_object_mut().unwrap().remove("timestamp");
    let w: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v, w);
    let d = run(&["run", "heisenberg", "--samples", "10", "--seed", "8", "--report", "-"]);
    assert_ne!(a.stdout, d.stdout);
}

#[test]
fn malformed_scenario_exits_2_with_field() {
    let p = tmp("bad.json");
    std::fs::write(&p, r#"{"name": "x", "kind": "poisson", "dim": 2, "transversal": {"p": 0}, "bivector": [[1, 2, "x1 +"]]}"#).unwrap();
    let out = run(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bivector[0][2]"));
    std::fs::write(&p, r#"{"name": "x", "kind": "poisson", "dim": 2, "transversal": {"p": 0}, "sampling": {"radius": "big"}}"#).unwrap();
    let out = run(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sampling.radius"));
    let out = run(&["run", "no-such-scenario"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failing_check_exits_1() {
    let p = tmp("odd.json");
    std::fs::write(
        &p,
        r#"{"name": "odd", "kind": "poisson", "dim": 3, "transversal": {"p": 2},
            "bivector": [[1, 3, "1"], [2, 3, "x1"]]}"#,
    )
    .unwrap();
    let out = run(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL cosymplectic"));
}

#[test]
fn numeric_failure_exits_3() {
    let p = tmp("quad.json");
    std::fs::write(
        &p,
        r#"{"name": "q", "kind": "poisson", "dim": 3,
            "transversal": {"p": 1, "offset": [0, 0, 1], "order": [3, 1, 2]},
            "bivector": [[1, 2, "x3"], [2, 3, "x1"], [3, 1, "x2"]],
            "quadrature": {"nodes": 2, "max_nodes": 2, "tol": 1e-15},
            "sampling": {"count": 5}}"#,
    )
    .unwrap();
    let out = run(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("quadrature"));
}
