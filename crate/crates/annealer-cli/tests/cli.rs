//! Black-box CLI tests: exit codes, overrides, artifacts, and sweeps.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_annealer"))
}

fn write_config(dir: &Path, run_dir: &Path, max_steps: u32, seed: u64) -> std::path::PathBuf {
    let text = format!(
        r#"
schedule_mode = "combined"
[target]
name = "gauss1d"
dim = 1
offset = 0.8
[family]
k_comp = 3
em_max_iters = 30
[loop]
buffer_size = 4000
max_steps = {max_steps}
seed = {seed}
[output]
run_dir = "{}"
"#,
        run_dir.display()
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_ok(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn run_converges_with_exit_zero_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &run_dir, 30, 5);

    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = run_ok(&out);
    assert!(stdout.contains("converged=true"), "summary line missing: {stdout}");

    for f in ["config.json", "telemetry.jsonl", "metrics.json", "final_model.json", "report.csv"] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn run_exits_two_when_the_step_cap_preempts_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &run_dir, 1, 5);
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(run_dir.join("metrics.json").is_file(), "capped runs still write artifacts");
}

#[test]
fn run_exits_one_on_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "target.name = \"no_such_target\"").unwrap();
    let out = bin().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty(), "errors must reach stderr");

    let missing = dir.path().join("nope.toml");
    let out = bin().args(["run", "--config"]).arg(&missing).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_and_out_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let base_dir = dir.path().join("base");
    let cfg = write_config(dir.path(), &base_dir, 30, 5);

    let alt_dir = dir.path().join("alt");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--seed", "99", "--out"])
        .arg(&alt_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(alt_dir.join("metrics.json").is_file(), "--out not honored");
    assert!(!base_dir.exists(), "run leaked into the config-specified dir");

    // The recorded config reflects the seed override.
    let stored: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(alt_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(stored["loop"]["seed"].as_u64(), Some(99));
}

#[test]
fn report_subcommand_rebuilds_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &run_dir, 30, 7);
    assert_eq!(bin().args(["run", "--config"]).arg(&cfg).output().unwrap().status.code(), Some(0));

    let first = fs::read(run_dir.join("report.csv")).unwrap();
    let out = bin().args(["report", "--out"]).arg(&run_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let second = fs::read(run_dir.join("report.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn sweep_expands_grids_and_reports_each_run() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("unused");
    let cfg = write_config(dir.path(), &run_dir, 30, 3);
    let grid = dir.path().join("grid.toml");
    fs::write(&grid, "dual.eps_tr = [0.3, 1.0]\n").unwrap();

    let sweep_dir = dir.path().join("sweep");
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--grid")
        .arg(&grid)
        .arg("--out")
        .arg(&sweep_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    assert!(sweep_dir.join("sweep_index.json").is_file());
    for i in 0..2 {
        let d = sweep_dir.join(format!("sweep-{i:04}"));
        assert!(d.join("metrics.json").is_file());
        assert!(d.join("report.csv").is_file());
    }
}
