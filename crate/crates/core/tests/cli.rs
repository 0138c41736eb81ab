use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn sascycle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sascycle")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn certify(config: &Path, dir: &Path) -> Output {
    sascycle(&["certify", "--config", s(config), "--out", s(dir)])
}

#[test]
fn certified_toy_passes_verify_and_perturbed_q_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = configs().join("toy.json");
    let out = certify(&config, dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["nominal_certificate.json", "robust_certificate.json", "lmi_problem.json", "report.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let nominal = dir.path().join("nominal_certificate.json");
    let robust = dir.path().join("robust_certificate.json");
    let out = sascycle(&["verify", "--config", s(&config), "--nominal", s(&nominal), "--robust", s(&robust)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));

    let mut cert: Value = serde_json::from_str(&std::fs::read_to_string(&robust).unwrap()).unwrap();
    let q = cert["Q"][0][0].as_f64().unwrap();
    cert["Q"][0][0] = Value::from(q - 200.0);
    let bad = dir.path().join("bad_robust.json");
    std::fs::write(&bad, serde_json::to_string(&cert).unwrap()).unwrap();
    let out = sascycle(&["verify", "--config", s(&config), "--nominal", s(&nominal), "--robust", s(&bad)]);
    assert_eq!(code(&out), 3);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["valid"], Value::Bool(false));
}

#[test]
fn reported_certificates_verify_without_system_data() {
    let c = configs();
    let out = sascycle(&[
        "verify",
        "--nominal",
        s(&c.join("reference_nominal.json")),
        "--robust",
        s(&c.join("reference_robust.json")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn same_seed_gives_identical_trace_files() {
    let config = configs().join("toy.json");
    let run = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = sascycle(&["simulate", "--config", s(&config), "--out", s(dir.path()), "--seed", seed]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(dir.path().join("trace.csv")).unwrap()
    };
    let a = run("11");
    assert_eq!(a, run("11"));
    assert_ne!(a, run("12"));
}

#[test]
fn horizon_one_writes_a_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let config = configs().join("toy.json");
    let out = sascycle(&["simulate", "--config", s(&config), "--out", s(dir.path()), "--horizon", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert!(lines[1].starts_with("k,"));
    assert_eq!(lines.len(), 3);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["horizon"], Value::from(1));
}

#[test]
fn unstable_cycle_exits_with_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = certify(&configs().join("unstable_cycle.json"), dir.path());
    assert_eq!(code(&out), 3);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["success"], Value::Bool(false));
}

#[test]
fn malformed_inputs_exit_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"system_file": "x.json", "colour": 1}"#).unwrap();
    assert_eq!(code(&certify(&unknown, dir.path())), 2);

    let missing = dir.path().join("missing.json");
    assert_eq!(code(&certify(&missing, dir.path())), 2);

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "").unwrap();
    let out = sascycle(&["verify", "--nominal", s(&empty)]);
    assert_eq!(code(&out), 2);

    let out = sascycle(&["certify", "--config", s(&configs().join("toy.json")), "--gamma", "1.5"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn discretize_writes_a_loadable_vertex_system() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("system.json");
    let out = sascycle(&["discretize", "--config", s(&configs().join("benchmark.json")), "--out", s(&sys)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let file: sascycle::io::SystemFile = sascycle::io::read_json(&sys).unwrap();
    let (system, _) = file.build(None).unwrap();
    assert_eq!(system.num_modes(), 2);
    assert_eq!(system.dim(), 3);
    assert!(system.modes().iter().all(|m| m.num_vertices() == 2));
}

#[test]
fn zero_uncertainty_bound_collapses_vertices() {
    let dir = tempfile::tempdir().unwrap();
    let mut config: Value =
        serde_json::from_str(&std::fs::read_to_string(configs().join("benchmark.json")).unwrap()).unwrap();
    for mode in config["system"]["continuous"]["modes"].as_array_mut().unwrap() {
        mode["uncertainty"]["bound"] = Value::from(0.0);
    }
    let path = dir.path().join("zero.json");
    std::fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let sys = dir.path().join("system.json");
    let out = sascycle(&["discretize", "--config", s(&path), "--out", s(&sys)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let file: sascycle::io::SystemFile = sascycle::io::read_json(&sys).unwrap();
    let (system, nominal) = file.build(None).unwrap();
    for j in 0..system.num_modes() {
        for v in system.mode(j).vertices() {
            assert!((&v.a - nominal.a(j)).amax() < 1e-14);
            assert!((&v.b - nominal.b(j)).amax() < 1e-14);
        }
    }
}

#[test]
fn project_reports_disjoint_reference_ellipsoids() {
    let dir = tempfile::tempdir().unwrap();
    let c = configs();
    let out = sascycle(&[
        "project",
        "--config",
        s(&c.join("benchmark_reference.json")),
        "--nominal",
        s(&c.join("reference_nominal.json")),
        "--robust",
        s(&c.join("reference_robust.json")),
        "--out",
        s(dir.path()),
        "--resolution",
        "8",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let file: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("ellipsoids.json")).unwrap()).unwrap();
    assert_eq!(file["all_disjoint"], Value::Bool(true));
    assert!(file["pairs"][0]["separation"].as_f64().unwrap() > 1.0);
}
