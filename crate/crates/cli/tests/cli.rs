use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_oblique-mv"))
        .args(["run", "--config", path.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .args(extra)
        .env_remove("OBLIQUE_MV_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn properties_on_half_space_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), r#"{"mode": "properties", "constraint": {"type": "half-space", "normal": [0.0, 1.0], "offset": 0.0}}"#, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap();
    assert!(summary.contains("\"passed\": true"));
    assert!(dir.path().join("out/properties.csv").exists());
}

#[test]
fn short_ladder_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), r#"{"mode": "converge", "system": {"name": "ou"}, "grid": {"steps": 64}, "epsilons": [0.1, 0.05]}"#, &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilons"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_keys_and_systems_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), r#"{"mode": "simulate", "system": {"name": "ou"}, "grid": {"steps": 8}, "stpes": 3}"#, &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stpes"));
    let o = run(dir.path(), r#"{"mode": "simulate", "system": {"name": "nope"}, "grid": {"steps": 8}}"#, &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("oblique-ball"));
}

#[test]
fn unstable_penalized_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"mode": "simulate", "system": {"name": "ou"}, "grid": {"steps": 8}, "scheme": {"type": "penalized", "epsilon": 0.001}}"#;
    let o = run(dir.path(), cfg, &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unstable"));
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let cfg = r#"{"mode": "simulate", "system": {"name": "oblique-ball"}, "grid": {"steps": 32}, "particles": 6, "replications": 3, "seed": 42}"#;
    let mut outputs = Vec::new();
    for threads in ["1", "2", "8"] {
        let dir = tempfile::tempdir().unwrap();
        let o = run(dir.path(), cfg, &["--threads", threads]);
        assert_eq!(code(&o), 0);
        let csv = std::fs::read(dir.path().join("out/paths.csv")).unwrap();
        let manifest = std::fs::read(dir.path().join("out/manifest.json")).unwrap();
        outputs.push((csv, manifest));
    }
    assert!(outputs.windows(2).all(|w| w[0].0 == w[1].0));
    let manifest = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert!(manifest.contains("\"seed\": 42") && manifest.contains("config_sha256"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"mode": "simulate", "system": {"name": "ou"}, "grid": {"steps": 8}, "particles": 2, "seed": 1}"#;
    assert_eq!(code(&run(dir.path(), cfg, &["--seed", "7"])), 0);
    let manifest = std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 7"));
}

#[test]
fn strict_mode_turns_failed_checks_into_status_four() {
    let dir = tempfile::tempdir().unwrap();
    let passing = r#"{"mode": "validate", "system": {"name": "ou", "params": {"theta": 1.0, "h": 2.0}}, "samples": 50}"#;
    assert_eq!(code(&run(dir.path(), passing, &["--strict"])), 0);
    // The uncorrected reduction drifts away from the direct solution.
    let failing = r#"{"mode": "transform-demo", "problem": {"name": "moving-interval"}, "form": "additive", "ladder": [32, 64], "particles": 8, "replications": 2}"#;
    let o = run(dir.path(), failing, &[]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    assert_eq!(code(&run(dir.path(), failing, &["--strict"])), 4);
}

#[test]
fn describe_lists_and_rejects() {
    let bin = env!("CARGO_BIN_EXE_oblique-mv");
    let o = Command::new(bin).args(["describe", "oblique-ball"]).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("diag(") && text.contains("a_H = 3"));
    let o = Command::new(bin).args(["describe", "unknown"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reflected-bm"));
    let o = Command::new(bin).arg("describe").output().unwrap();
    assert!(String::from_utf8_lossy(&o.stdout).contains("moving-interval"));
}
