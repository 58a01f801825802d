use std::fs;
use std::process::Command;

fn tubular() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tubular"))
}

#[test]
fn list_prints_builtin_scenarios() {
    let out = tubular().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["point-2d", "flat-slice", "circle", "helix", "sphere-equator"] {
        assert!(text.lines().any(|l| l == name), "{text}");
    }
}

#[test]
fn check_accepts_builtin_and_rejects_unknown_submanifold() {
    assert!(tubular().args(["check", "circle"]).output().unwrap().status.success());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = tubular_core::harness::config::builtin_source("circle")
        .unwrap()
        .replace("kind = \"circle\"", "kind = \"torus\"");
    fs::write(&path, text).unwrap();
    let out = tubular().arg("check").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("submanifold"), "{err}");
}

#[test]
fn run_writes_report_to_env_directory_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = tubular()
        .args(["run", "point-2d", "--samples", "20", "--format", "lines"])
        .env("TUBULAR_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = dir.path().join("point-2d.jsonl");
    let reports = tubular_core::harness::report::read(&path, tubular_core::harness::Format::Lines).unwrap();
    assert!(!reports.is_empty());
    assert!(reports.iter().all(|r| r.pass && r.scenario == "point-2d"));
    let diagram = reports.iter().find(|r| r.stage == "diagram").unwrap();
    assert_eq!(diagram.sample_count, 20);
}

#[test]
fn failing_stage_gives_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    // No residual is exactly zero at this tolerance in the diagram stage.
    let out = tubular()
        .args(["run", "point-2d", "--samples", "5", "--tol", "1e-300", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("scenario,stage,"), "{text}");
}

#[test]
fn bad_arguments_are_rejected() {
    let code = |args: &[&str]| tubular().args(args).output().unwrap().status.code();
    assert_eq!(code(&["run", "nowhere"]), Some(2));
    assert_eq!(code(&["run", "circle", "--tol=0"]), Some(2));
    assert_eq!(code(&["run", "circle", "--samples", "0"]), Some(2));
    assert_eq!(code(&["run", "circle", "--format", "xml"]), Some(2));
}
