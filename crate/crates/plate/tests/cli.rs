//! End-to-end checks of the command-line driver: exit codes, artifacts, and
//! the verification subcommand.

use std::process::Command;

fn plate() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plate"))
}

fn write_config(dir: &std::path::Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

fn temp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("plate-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn study_writes_artifacts_and_exits_zero() {
    let dir = temp_dir("study");
    let cfg = write_config(
        &dir,
        "[run]\nscheme = morley\nstudy = uniform\nlevels = 2\n[source]\nkind = manufactured\n",
    );
    let out = dir.join("out");
    let status = plate()
        .args(["study", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--svg")
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("study.csv")).unwrap();
    assert!(csv.starts_with("level,ndof,hmax,err_energy,estA,estB,est_theorem,osc,apx,eff_index"));
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("study.svg").exists());
    assert!(out.join("estimators.csv").exists());
    assert!(out.join("indicators_elements.csv").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = temp_dir("badcfg");
    let cfg = write_config(&dir, "[run]\nscheme = nosuch\n");
    let output = plate().args(["study", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("line 2"), "stderr: {err}");

    // Missing mesh file is a configuration error as well.
    let cfg2 = write_config(&dir, "[run]\ndomain = file:/nonexistent.mesh\n");
    let output = plate().args(["study", "--config"]).arg(&cfg2).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_three() {
    let dir = temp_dir("numfail");
    // A point load away from any interior vertex fails in the source stage.
    let cfg = write_config(
        &dir,
        "[run]\nscheme = morley\nstudy = uniform\nlevels = 1\n[source]\nkind = point\npoint = 0.31 0.41 1.0\n",
    );
    let output = plate().args(["study", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn verify_prints_named_checks() {
    let dir = temp_dir("verify");
    let cfg = write_config(&dir, "[run]\nscheme = morley\n");
    let output = plate().args(["verify", "--config"]).arg(&cfg).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
    assert!(text.contains("companion-right-inverse"));
}

#[test]
fn adapt_subcommand_runs_point_load() {
    let dir = temp_dir("adapt");
    let cfg = write_config(
        &dir,
        "[run]\nscheme = morley\nsmoother = jh\nstudy = adaptive\nmax_dofs = 300\n[source]\nkind = point\npoint = 0.5 0.5 1.0\n",
    );
    let out = dir.join("out");
    let status = plate()
        .args(["adapt", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("study.csv")).unwrap();
    assert!(csv.lines().count() >= 3);
}

#[test]
fn solve_on_mesh_file() {
    let dir = temp_dir("meshfile");
    let mesh_path = dir.join("square.mesh");
    std::fs::write(&mesh_path, "4 2\n0 0\n1 0\n1 1\n0 1\n0 1 2\n0 2 3\n").unwrap();
    let cfg = write_config(
        &dir,
        &format!(
            "[run]\ndomain = file:{}\nscheme = morley\nlevels = 2\n[source]\nkind = constant\nvalue = 1.0\n",
            mesh_path.display()
        ),
    );
    let output = plate().args(["solve", "--config"]).arg(&cfg).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("level,ndof"));
}
