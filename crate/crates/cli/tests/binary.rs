use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qpath(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qpath"));
    cmd.current_dir(dir).args(args).env_remove("QPATH_SEED").env_remove("QPATH_WORKERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &str = "mode = \"simulate\"\n[params]\nn_steps = 40\ndelta = 3.0\n[ensemble]\nn_traj = 300\nmaster_seed = 9\n";

#[test]
fn simulate_writes_dumps_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let out = qpath(dir.path(), &["--config", "run.toml", "--out", "a", "--format", "csv", "--format", "binary"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["mode"], "simulate");
    let a = dir.path().join("a");
    for f in ["trajectories.csv", "trajectories.bin", "simulate_stats.csv"] {
        assert!(a.join(f).exists(), "{f}");
        let m = manifest(&a.join(format!("{f}.manifest.json")));
        assert_eq!(m["file"], f);
        assert_eq!(m["master_seed"], 9);
        assert_eq!(m["config"]["ensemble"]["n_traj"], 300);
        assert!(m["resolved_defaults"].as_array().unwrap().iter().any(|p| p == "params.tau_m"));
        for key in ["version", "workers", "wall_time", "warnings"] {
            assert!(m.get(key).is_some(), "{key}");
        }
    }
    let (_, trs) = qpath::dump::read_binary(fs::File::open(a.join("trajectories.bin")).unwrap()).unwrap();
    assert_eq!(trs.len(), 300);
    assert_eq!(trs[0].trajectory.states.len(), 41);
}

#[test]
fn replay_from_manifest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let first = qpath(
        dir.path(),
        &["--config", "run.toml", "--out", "a", "--format", "binary", "--format", "csv", "--workers", "1"],
        &[],
    );
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let again = qpath(
        dir.path(),
        &["--config", "a/trajectories.bin.manifest.json", "--out", "b", "--workers", "3"],
        &[],
    );
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    for f in ["trajectories.csv", "trajectories.bin", "simulate_stats.csv"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn seed_precedence_is_flag_then_env_then_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL.replace("n_traj = 300", "n_traj = 2")).unwrap();
    let seed_of = |args: &[&str], env: &[(&str, &str)], out: &str| {
        let mut a = vec!["--config", "run.toml", "--out", out];
        a.extend_from_slice(args);
        let o = qpath(dir.path(), &a, env);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        manifest(&dir.path().join(out).join("simulate_stats.csv.manifest.json"))["master_seed"].clone()
    };
    assert_eq!(seed_of(&[], &[], "s0"), 9);
    assert_eq!(seed_of(&[], &[("QPATH_SEED", "11")], "s1"), 11);
    assert_eq!(seed_of(&["--seed", "12"], &[("QPATH_SEED", "11")], "s2"), 12);
    let w = qpath(dir.path(), &["--config", "run.toml", "--out", "s3"], &[("QPATH_WORKERS", "2")]);
    assert!(w.status.success());
    assert_eq!(manifest(&dir.path().join("s3/simulate_stats.csv.manifest.json"))["workers"], 2);
}

#[test]
fn invalid_tolerance_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[selection]\ntolerance = 0.0\n").unwrap();
    let out = qpath(dir.path(), &["--config", "bad.toml", "--out", "o"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let rec: Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(rec["error"], "validation");
    assert!(rec["violations"].as_array().unwrap().iter().any(|v| v["path"] == "selection.tolerance"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn malformed_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[params]\ntau = 1\n").unwrap();
    let out = qpath(dir.path(), &["--config", "bad.toml"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let rec: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(rec["error"], "config");
}

#[test]
fn runtime_failure_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    // A window no trajectory can reach in so short a run.
    let text = "[params]\nn_steps = 2\n[ensemble]\nn_traj = 50\n[selection]\nz_final = 0.999\ntolerance = 1e-6\n";
    fs::write(dir.path().join("run.toml"), text).unwrap();
    let out = qpath(dir.path(), &["--config", "run.toml", "--out", "o"], &[]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let rec: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(rec["error"], "runtime");
}

#[test]
fn bare_simulate_uses_the_desk_scale_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = qpath(dir.path(), &["--mode", "simulate", "--out", "o", "--format", "binary"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, trs) = qpath::dump::read_binary(fs::File::open(dir.path().join("o/trajectories.bin")).unwrap()).unwrap();
    assert_eq!(trs.len(), 1000);
    assert_eq!(header.config["params"]["dt"], 0.006);
    assert_eq!(trs[0].trajectory.states.len(), 101);
    assert!(dir.path().join("o/trajectories.bin.manifest.json").exists());
}
