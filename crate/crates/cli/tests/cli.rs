//! End-to-end checks of the command-line surface: subcommands, flags, output
//! files and exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cfiot"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("cfiot_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        "# quick desk instance\nl = 4\nn = 2\nk = 6\nk_a = 2\ntau = 8\nt_max = 50\nseed = 5\n",
    )
    .unwrap();
    path
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap_or_default()
        .to_string()
}

#[test]
fn simulate_writes_slots_and_summary() {
    let dir = tmp("simulate");
    let cfg = write_tiny_config(&dir);
    let out = dir.join("out");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(first_line(&out.join("slots.csv")).starts_with("t,delta,r_aux,q_prime"));
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"min_avg_rate_final\""));
}

#[test]
fn baseline_writes_same_surface() {
    let dir = tmp("baseline");
    let cfg = write_tiny_config(&dir);
    let out = dir.join("out");
    let status = bin()
        .args(["baseline", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .args(["--slots", "30"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("slots.csv").exists());
    assert!(out.join("summary.json").exists());
    // --slots override reflected in the record count (header + 30 rows)
    let rows = std::fs::read_to_string(out.join("slots.csv")).unwrap().lines().count();
    assert_eq!(rows, 31);
}

#[test]
fn validate_writes_all_tables() {
    let dir = tmp("validate");
    let cfg = write_tiny_config(&dir);
    let out = dir.join("out");
    let status = bin()
        .args(["validate", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .args(["--trials", "120"])
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["validate_gamma.csv", "validate_energy.csv", "validate_rate.csv"] {
        assert_eq!(
            first_line(&out.join(name)),
            "k,closed_form,mc_mean,mc_std,n_trials",
            "{name}"
        );
    }
    assert_eq!(first_line(&out.join("ka_sweep.csv")), "k_a,avg_energy,avg_rate");
}

#[test]
fn simulate_trace_flag_writes_solver_trace() {
    let dir = tmp("trace");
    let cfg = write_tiny_config(&dir);
    let out = dir.join("out");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .args(["--slots", "8", "--trace"])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(out.join("solver_trace.log")).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(text.contains("scp_iters="));
}

#[test]
fn identical_seeds_give_bit_identical_slot_logs() {
    let dir = tmp("determinism");
    let cfg = write_tiny_config(&dir);
    let (out1, out2) = (dir.join("a"), dir.join("b"));
    for out in [&out1, &out2] {
        let status = bin()
            .args(["simulate", "--config"])
            .arg(&cfg)
            .args(["--out"])
            .arg(out)
            .args(["--seed", "42"])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(out1.join("slots.csv")).unwrap();
    let b = std::fs::read(out2.join("slots.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sweep_writes_batch_table() {
    let dir = tmp("sweep");
    let cfg = write_tiny_config(&dir);
    let out = dir.join("out");
    let status = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .args(["--seeds", "2", "--w-list", "1,10", "--slots", "20"])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(text.starts_with("seed,w,scheme,"));
    // 2 seeds x 2 W x 2 schemes + header
    assert_eq!(text.lines().count(), 9);
}

#[test]
fn bad_config_fails_with_one_line_diagnostic() {
    let dir = tmp("bad_config");
    let path = dir.join("bad.cfg");
    std::fs::write(&path, "bogus_key = 3\n").unwrap();
    let output = bin()
        .args(["simulate", "--config"])
        .arg(&path)
        .args(["--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert_eq!(stderr.trim().lines().count(), 1, "stderr: {stderr}");
    assert!(stderr.contains("unknown key"));
}
