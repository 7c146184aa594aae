//! End-to-end checks of the command-line interface: exit codes, file
//! outputs, and reproducibility from the emitted effective configuration.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use biped::config::RunConfig;
use biped::vhc::constraint_residuals;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_biped"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn model_check_passes_on_the_reference_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--out", dir.path().to_str().unwrap(), "model-check"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("all invariants hold"));
    assert!(dir.path().join("effective.cfg").is_file());
}

#[test]
fn gait_solve_writes_a_machine_precision_gait_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--out", dir.path().to_str().unwrap(), "gait", "solve"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let refined = RunConfig::load(&dir.path().join("gait.cfg")).unwrap();
    let res = constraint_residuals(&refined.biped, &refined.vhc);
    assert!(res.amax() < 1e-9, "refined residual {:.3e}", res.amax());
}

#[test]
fn zerodyn_tabulates_the_reduced_dynamics_and_reports_feasibility() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--out", dir.path().to_str().unwrap(), "zerodyn"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("feasible"));
    let csv = fs::read_to_string(dir.path().join("zerodyn.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("q2,alpha1,alpha2,psi,potential"));
    assert_eq!(lines.count(), 513);
    // The tabulation is normalized at the upright stance: psi(0) = 1 and the
    // virtual potential vanishes there.
    let mid: Vec<f64> = csv
        .lines()
        .nth(257)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(mid[0].abs() < 1e-9, "grid midpoint should be the upright stance");
    assert!((mid[3] - 1.0).abs() < 1e-9);
    assert!(mid[4].abs() < 1e-9);
}

#[test]
fn stabilize_writes_the_design_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--out", dir.path().to_str().unwrap(), "stabilize"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("controllability rank = 9/9"), "{text}");
    assert!(text.contains("closed-loop spectral radius = 0.84"), "{text}");
    for (name, rows, cols) in
        [("z_star.txt", 1, 9), ("A.txt", 9, 9), ("B.txt", 9, 4), ("K.txt", 4, 9)]
    {
        let m = biped::icpm::read_matrix(&dir.path().join(name)).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (rows, cols), "{name}");
    }
}

#[test]
fn simulate_reproduces_its_outputs_from_the_effective_config() {
    let dir1 = tempfile::tempdir().unwrap();
    let out = run(&[
        "--out",
        dir1.path().to_str().unwrap(),
        "--steps",
        "3",
        "--perturb",
        "1e-3",
        "simulate",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let dir2 = tempfile::tempdir().unwrap();
    let again = run(&[
        "--config",
        dir1.path().join("effective.cfg").to_str().unwrap(),
        "--out",
        dir2.path().to_str().unwrap(),
        "simulate",
    ]);
    assert!(again.status.success(), "{}", stderr(&again));
    for name in ["trajectory.csv", "steps.csv", "summary.txt"] {
        let a = fs::read(dir1.path().join(name)).unwrap();
        let b = fs::read(dir2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} must be reproducible from the effective config");
    }
}

#[test]
fn simulate_decays_the_section_error_under_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "--steps",
        "10",
        "--perturb",
        "1e-3",
        "simulate",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    let final_error: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("final section error: "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(final_error < 3e-4, "ten controlled steps should shrink 1e-3 ({final_error:.3e})");
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn invalid_mass_is_named_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[biped]\nm = 0.4 -0.45 0.55 0.45 0.4\n");
    let out = run(&["--config", &cfg, "--out", dir.path().to_str().unwrap(), "model-check"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("[biped].m[1]"), "{}", stderr(&out));
}

#[test]
fn zero_step_amplitude_warns_about_a_trivial_gait() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[vhc]\ntheta1_i = 0\n");
    let out = run(&["--config", &cfg, "--out", dir.path().to_str().unwrap(), "gait", "check"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("trivial gait"));
}

#[test]
fn unrecoverable_fall_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[icpm]\nenabled = false\n");
    let out = run(&[
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
        "--steps",
        "3",
        "--perturb",
        "0.8",
        "simulate",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("step failure"), "{}", stderr(&out));
}

#[test]
fn open_loop_walk_completes_under_small_perturbations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[icpm]\nenabled = false\n");
    let out = run(&[
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
        "--steps",
        "3",
        "--perturb",
        "1e-4",
        "simulate",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("feedback disabled"));
}

#[test]
fn high_gain_mode_walks_and_is_recorded_in_the_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "--steps",
        "2",
        "--perturb",
        "1e-3",
        "--impulse-mode",
        "highgain",
        "simulate",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let effective = fs::read_to_string(dir.path().join("effective.cfg")).unwrap();
    assert!(effective.contains("impulse_mode = highgain"));
}
