//! End-to-end checks of the command-line driver: output artifacts,
//! reproducibility, and exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_conelift")
}

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_cfg(dir: &Path, name: &str, content: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, content).unwrap();
    p
}

const SMALL_TRAIN: &str = "[run]\n\
backend = lift\n\
target = gumbel\n\
iterations = 20\n\
batch = 32\n\
val_cadence = 10\n\
val_size = 64\n\
train_grid_step = 0.05\n\
seed = 3\n";

#[test]
fn train_writes_run_csv_and_snapshots() {
    let dir = tmp("train_basic");
    let cfg = write_cfg(&dir, "run.cfg", SMALL_TRAIN);
    let out = dir.join("out");
    let status = Command::new(bin())
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--quiet")
        .status()
        .unwrap();
    assert!(status.success());
    let run_csv = out.join("run_lift_gumbel_seed3.csv");
    assert!(run_csv.exists());
    let text = std::fs::read_to_string(&run_csv).unwrap();
    assert!(text.starts_with(
        "iteration,train_loss,val_loss,sigma_jac_sq,sigma_obj_sq,rho_ratio,occupancy,frob_cross_cov"
    ));
    assert_eq!(text.lines().count(), 21, "header plus one row per iteration");
    // snapshot files at the declared stride
    assert!(out.join("run_3_iter_0.csv").exists());
    assert!(out.join("run_3_iter_10.csv").exists());
    let snap = std::fs::read_to_string(out.join("run_3_iter_0.csv")).unwrap();
    assert!(snap.starts_with("snapshot_v1\n"));
    assert!(snap.contains("theta_tilde"));
}

#[test]
fn same_config_same_seed_byte_identical() {
    let dir = tmp("train_determinism");
    let cfg = write_cfg(&dir, "run.cfg", SMALL_TRAIN);
    let (out_a, out_b) = (dir.join("a"), dir.join("b"));
    for out in [&out_a, &out_b] {
        let status = Command::new(bin())
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .arg("--quiet")
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(out_a.join("run_lift_gumbel_seed3.csv")).unwrap();
    let b = std::fs::read(out_b.join("run_lift_gumbel_seed3.csv")).unwrap();
    assert_eq!(a, b);
    let a = std::fs::read(out_a.join("run_3_iter_10.csv")).unwrap();
    let b = std::fs::read(out_b.join("run_3_iter_10.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_target_key_exits_2_and_names_the_key() {
    let dir = tmp("missing_key");
    let cfg = write_cfg(&dir, "bad.cfg", "[run]\nbackend = lift\n");
    let output = Command::new(bin())
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("target"), "stderr: {err}");
}

#[test]
fn unknown_key_exits_2_with_line_number() {
    let dir = tmp("unknown_key");
    let cfg = write_cfg(
        &dir,
        "bad.cfg",
        "[run]\nbackend = lift\ntarget = gumbel\nbogus_knob = 1\n",
    );
    let output = Command::new(bin())
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains(":4:") && err.contains("bogus_knob"), "stderr: {err}");
}

#[test]
fn sde_grid_rows_and_zero_noise_cells() {
    let dir = tmp("sde");
    let cfg = write_cfg(
        &dir,
        "sde.cfg",
        "[sde]\nreplicates = 32\nmax_steps = 2000\nsigma_jac_grid = 0.0 0.02 0.05 0.1 0.2 0.35 0.5\n",
    );
    let run = |seed: &str, out: &Path| -> String {
        let status = Command::new(bin())
            .args(["sde", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .args(["--seed", seed, "--quiet"])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read_to_string(out.join("sde.csv")).unwrap()
    };
    let a = run("0", &dir.join("a"));
    let b = run("1", &dir.join("b"));
    // a grid of 7 cells produces 7 rows (plus the header)
    assert_eq!(a.lines().count(), 8);
    let first_row = a.lines().nth(1).unwrap();
    assert!(first_row.starts_with("0.0,0,0.0,"), "row: {first_row}");
    // seed change alters the stochastic cells but not the no-noise cell
    assert_eq!(b.lines().nth(1).unwrap(), first_row);
    assert_ne!(a, b);
}

#[test]
fn unknown_command_and_flags_exit_2() {
    let output = Command::new(bin()).arg("frobnicate").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let output = Command::new(bin()).args(["train", "--nope"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}
