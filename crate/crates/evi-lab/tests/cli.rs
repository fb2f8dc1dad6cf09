//! Smoke tests driving the compiled binary: every subcommand, every exit
//! class, and the files each one leaves behind.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evi_lab::config::load_config;
use evi_lab::presets;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evi-lab"))
        .args(args)
        .output()
        .expect("failed to spawn the evi-lab binary")
}

fn stdout_of(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr_of(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("the binary should exit, not be killed")
}

/// Dump the shipped presets into `dir` and return the path of `name`.
fn preset_path(dir: &Path, name: &str) -> String {
    let o = run(&["presets", "--write", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "presets --write failed: {}", stderr_of(&o));
    dir.join(format!("{name}.toml")).to_string_lossy().into_owned()
}

fn lines_of(path: &PathBuf) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn presets_lists_every_shipped_config() {
    let o = run(&["presets"]);
    assert_eq!(code(&o), 0, "{}", stderr_of(&o));
    let text = stdout_of(&o);
    for p in presets::PRESETS {
        assert!(text.contains(p.name), "listing lacks {}:\n{text}", p.name);
    }
}

#[test]
fn written_presets_load_back_under_their_own_names() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["presets", "--write", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr_of(&o));
    for p in presets::PRESETS {
        let path = dir.path().join(format!("{}.toml", p.name));
        let cfg = load_config(&path).unwrap_or_else(|e| panic!("{}: {e:#}", p.name));
        assert_eq!(cfg.name, p.name);
    }
}

#[test]
fn run_passes_the_quadratic_preset_and_writes_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset_path(dir.path(), "quadratic-implicit");
    let art = dir.path().join("art");
    let o = run(&["run", &cfg, "--out", art.to_str().unwrap()]);
    let text = stdout_of(&o);
    assert_eq!(code(&o), 0, "stdout:\n{text}\nstderr:\n{}", stderr_of(&o));
    assert!(text.contains("check discrete_evi: pass"), "{text}");
    assert!(text.contains("run quadratic-implicit: exit 0"), "{text}");
    assert!(art.join("quadratic-implicit").join("report.json").is_file());
}

#[test]
fn run_surfaces_failures_through_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset_path(dir.path(), "negative-control-concave");
    let art = dir.path().join("art");
    let o = run(&["run", &cfg, "--out", art.to_str().unwrap()]);
    let text = stdout_of(&o);
    assert_eq!(code(&o), 1, "{text}");
    assert!(text.contains("check cross_concave: fail"), "{text}");
}

#[test]
fn certify_runs_only_the_certificate_subset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset_path(dir.path(), "quadratic-splitting");
    let o = run(&["certify", &cfg]);
    let text = stdout_of(&o);
    assert_eq!(code(&o), 0, "stdout:\n{text}\nstderr:\n{}", stderr_of(&o));
    for name in ["cross_concave", "cross_convex", "nncc", "semiconvex", "midpoint"] {
        assert!(text.contains(&format!("check {name}: pass")), "{text}");
    }
    assert!(!text.contains("check discrete_evi"), "certify must drop scheme checks:\n{text}");
    assert!(!text.contains("artifacts:"), "certify writes no files:\n{text}");
}

#[test]
fn a_missing_config_is_an_operational_error() {
    let o = run(&["run", "/nonexistent/evi-lab-config.toml"]);
    assert_eq!(code(&o), 3);
    assert!(stderr_of(&o).starts_with("error:"), "{}", stderr_of(&o));
}

#[test]
fn transform_tabulates_the_dual_over_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset_path(dir.path(), "quadratic-implicit");
    let art = dir.path().join("art");
    let o = run(&["transform", &cfg, "--out", art.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr_of(&o));
    let lines = lines_of(&art.join("quadratic-implicit").join("transform.csv"));
    assert_eq!(lines[0], "index,value,witness");
    assert_eq!(lines.len(), 22, "21 grid entries plus the header");
}

#[test]
fn ladder_reports_every_level_and_dumps_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset_path(dir.path(), "quadratic-implicit");
    let art = dir.path().join("art");
    let o = run(&["ladder", &cfg, "--out", art.to_str().unwrap()]);
    let text = stdout_of(&o);
    assert_eq!(code(&o), 0, "{text}");
    for level in 0..4 {
        assert!(text.contains(&format!("level {level}:")), "{text}");
        let traj = art.join("quadratic-implicit").join(format!("trajectory_L{level}.csv"));
        assert!(traj.is_file(), "missing {}", traj.display());
    }
}
