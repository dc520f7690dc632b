//! End-to-end tests of the `kpp-spectra` binary.
//!
//! Each test spawns the compiled CLI via `CARGO_BIN_EXE_kpp-spectra` and
//! checks the contract a shell user or script relies on: stdout formats,
//! exit codes, and artifact determinism. Numerical accuracy is covered by
//! the acceptance suite; here the tolerances only guard against wiring
//! mistakes (wrong model loaded, wrong field printed).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_kpp-spectra")
}

fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn model(name: &str) -> String {
    models_dir().join(name).to_string_lossy().into_owned()
}

/// Fresh per-test output directory under the system temp dir.
fn out_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("kpp_cli_{}_{}", tag, std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("failed to spawn kpp-spectra")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Extract the first float following `prefix` on any stdout line.
fn parse_after(text: &str, prefix: &str) -> f64 {
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix(prefix) {
            let tok: String = rest
                .trim_start()
                .trim_start_matches('(')
                .chars()
                .take_while(|c| c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E'))
                .collect();
            return tok.parse().unwrap_or_else(|_| {
                panic!("could not parse a float after {prefix:?} in line {line:?}")
            });
        }
    }
    panic!("no line starts with {prefix:?} in:\n{text}");
}

#[test]
fn lambda_prints_the_advection_eigenvalues() {
    let dir = out_dir("lambda");
    let out = run(&[
        "lambda",
        &model("scalar-advection.json"),
        "--out",
        dir.to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let lp = parse_after(&text, "lambda1' =");
    let l1 = parse_after(&text, "lambda1  =");
    let zmax = parse_after(&text, "z_max    =");
    assert!((lp + 0.125).abs() <= 1e-3, "lambda1' = {lp}");
    assert!((l1 - 0.125).abs() <= 1e-3, "lambda1 = {l1}");
    assert!((zmax - 0.5).abs() <= 1e-3, "z_max = {zmax}");
    assert!(dir.join("lambda.csv").is_file());
}

#[test]
fn fg_reports_the_classic_scalar_speed() {
    let dir = out_dir("fg");
    let out = run(&[
        "fg",
        "--e",
        "1",
        &model("scalar-homogeneous.json"),
        "--out",
        dir.to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let c = parse_after(&stdout(&out), "c_FG =");
    assert!((c - 2.0).abs() <= 0.02, "c_FG = {c}");
}

#[test]
fn validate_rejects_a_reducible_coupling_matrix() {
    let dir = out_dir("reducible");
    let out = run(&[
        "validate",
        &model("reducible.json"),
        "--out",
        dir.to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("irreducibility"),
        "stderr: {}",
        stderr(&out)
    );
    // The report is still written so the failure can be inspected.
    assert!(dir.join("assumptions.json").is_file());
}

#[test]
fn validate_accepts_a_well_posed_model() {
    let dir = out_dir("validate_ok");
    let out = run(&[
        "validate",
        &model("elliott-cornell.json"),
        "--out",
        dir.to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("pass"));
}

#[test]
fn unknown_commands_and_flags_are_usage_errors() {
    let out = run(&["frobnicate", &model("scalar-advection.json")]);
    assert_eq!(out.status.code(), Some(2), "unknown subcommand");
    let msg = stderr(&out);
    assert!(msg.to_lowercase().contains("usage"), "stderr: {msg}");

    let out = run(&["lambda", "--bogus-flag", &model("scalar-advection.json")]);
    assert_eq!(out.status.code(), Some(2), "unknown flag");
    assert!(stderr(&out).to_lowercase().contains("usage"));
}

#[test]
fn missing_model_is_a_computation_error_not_usage() {
    let out = run(&["lambda", "/nonexistent/model.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).starts_with("error:"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn artifacts_are_byte_identical_without_timestamps() {
    let dir_a = out_dir("det_a");
    let dir_b = out_dir("det_b");
    for dir in [&dir_a, &dir_b] {
        let out = run(&[
            "eig",
            "--z",
            "0.5",
            &model("scalar-advection.json"),
            "--cells",
            "32",
            "--out",
            dir.to_str().unwrap(),
            "--no-timestamp",
        ]);
        assert!(out.status.success(), "stderr: {}", stderr(&out));
    }
    for name in ["eig.csv"] {
        let a = std::fs::read(dir_a.join(name)).unwrap();
        let b = std::fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn timestamped_runs_carry_the_header_line() {
    let dir = out_dir("stamped");
    let out = run(&[
        "eig",
        "--z",
        "0.5",
        &model("scalar-advection.json"),
        "--cells",
        "32",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.join("eig.csv")).unwrap();
    assert!(
        csv.starts_with("# generated at unix "),
        "missing timestamp header: {}",
        csv.lines().next().unwrap_or("")
    );
}

#[test]
fn eig_rejects_a_shift_of_the_wrong_dimension() {
    let out = run(&["eig", "--z", "0.5,0.3", &model("scalar-advection.json")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("dimension"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn simulate_then_measure_recovers_a_front_speed() {
    let dir = out_dir("roundtrip");
    // A scenario small enough to run in seconds but long enough for the
    // front to settle near its asymptotic speed.
    let scn = dir.join("scenario.json");
    std::fs::write(
        &scn,
        format!(
            r#"{{"model": {:?}, "grid": {{"kind": "box", "r": 50.0, "cells": 399}},
               "initial": {{"kind": "compact", "center": [0.0], "radius": 3.0, "height": 1.0}},
               "t_end": 18.0, "snapshots": 9, "reaction": {{"kind": "kpp"}}}}"#,
            model("scalar-homogeneous.json")
        ),
    )
    .unwrap();
    let out = run(&[
        "simulate",
        scn.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let traj = dir.join("trajectory.kppt");
    assert!(traj.is_file());
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert!(
        summary
            .lines()
            .next()
            .unwrap()
            .ends_with("t,sup,min_ball,front_position")
            || summary.starts_with("t,sup"),
        "unexpected summary header: {}",
        summary.lines().next().unwrap()
    );

    let out = run(&[
        "measure",
        "--traj",
        traj.to_str().unwrap(),
        "--e",
        "1",
        "--out",
        dir.to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let c = parse_after(&stdout(&out), "front speed =");
    // Bramson delay biases the finite-time measurement below c* = 2.
    assert!((1.5..=2.1).contains(&c), "front speed = {c}");
}
