//! Command-line front end for the walking toolkit.
//!
//! One sectioned key=value configuration file drives the whole pipeline:
//! `model-check` validates the chain dynamics, `gait` evaluates or refines
//! the constraint parameters, `zerodyn` tabulates the reduced stance
//! dynamics, `stabilize` synthesizes the section feedback, and `simulate`
//! walks.  Every command writes the effective configuration next to its
//! outputs so a run can be reproduced from its own artifacts.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use biped::config::RunConfig;
use biped::icpm;
use biped::model::Model;
use biped::ode::{integrate_to, OdeOptions};
use biped::sim::{step_records_csv, RunOptions, SectionFeedback, Walker};
use biped::state::State;
use biped::vhc::{constraint_residuals, solve_parameters, Gait, SolveOptions};
use biped::zerodyn::{Orbit, ZeroDynamics};
use biped::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "biped",
    about = "Design, analyze, and simulate energy-conserving walking gaits \
             for point-foot planar bipeds"
)]
struct Cli {
    /// Configuration file (the built-in five-link benchmark when omitted).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides the configured one).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of walking steps (overrides the configured count).
    #[arg(long, global = true, value_name = "N")]
    steps: Option<usize>,
    /// Initial section-state perturbation magnitude.
    #[arg(long, global = true, value_name = "EPS")]
    perturb: Option<f64>,
    /// How boundary impulses are realized.
    #[arg(long, global = true, value_enum, value_name = "MODE")]
    impulse_mode: Option<ImpulseModeArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImpulseModeArg {
    /// Instantaneous velocity jump through the mass matrix.
    Ideal,
    /// Finite-time stiff-feedback burst.
    Highgain,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the chain model: inertia symmetries and energy conservation.
    ModelCheck,
    /// Evaluate or refine the gait boundary conditions.
    Gait {
        #[command(subcommand)]
        action: GaitAction,
    },
    /// Tabulate the reduced stance dynamics and check orbit feasibility.
    Zerodyn,
    /// Linearize the step map and synthesize the section feedback gain.
    Stabilize,
    /// Walk the configured number of steps and write trajectory data.
    Simulate,
}

#[derive(Subcommand)]
enum GaitAction {
    /// Print boundary-condition residuals and the regularity margin.
    Check,
    /// Re-solve the free parameters and write the refined gait file.
    Solve,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 0 success, 2 invalid input, 3 incomplete step, 4 numerical failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation { .. } | Error::Config { .. } | Error::Io(_) => 2,
        Error::Step(_) => 3,
        Error::Numerical { .. } => 4,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(steps) = cli.steps {
        if steps == 0 {
            return Err(Error::config("[sim].steps", "need at least one step"));
        }
        cfg.sim.steps = steps;
    }
    if let Some(eps) = cli.perturb {
        if !(eps >= 0.0) {
            return Err(Error::config("[sim].perturb", "perturbation size must be >= 0"));
        }
        cfg.sim.perturb = eps;
    }
    if let Some(mode) = cli.impulse_mode {
        cfg.controller.use_high_gain = matches!(mode, ImpulseModeArg::Highgain);
    }
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("effective.cfg"), cfg.emit())?;
    match &cli.command {
        Command::ModelCheck => cmd_model_check(&cfg),
        Command::Gait { action: GaitAction::Check } => cmd_gait_check(&cfg),
        Command::Gait { action: GaitAction::Solve } => cmd_gait_solve(&cfg),
        Command::Zerodyn => cmd_zerodyn(&cfg),
        Command::Stabilize => cmd_stabilize(&cfg),
        Command::Simulate => cmd_simulate(&cfg),
    }
}

/// Everything downstream commands need: a step executor carrying the chain
/// and the machine-precision gait, plus the target orbit.
struct Pipeline {
    walker: Walker,
    orbit: Orbit,
}

impl Pipeline {
    fn build(cfg: &RunConfig) -> Result<Pipeline> {
        let vhc = if cfg.free.is_empty() {
            cfg.vhc.clone()
        } else {
            solve_parameters(&cfg.biped, &cfg.vhc, &cfg.free, &SolveOptions::default())?.0
        };
        let model = Model::new(cfg.biped.clone());
        let gait = Gait::new(vhc)?;
        let walker = Walker::new(
            model.clone(),
            gait.clone(),
            cfg.controller.gains,
            cfg.icpm.section_q2,
            cfg.sim.config.clone(),
        )?;
        let zd = ZeroDynamics::new(&model, &gait, cfg.orbit.lo, cfg.orbit.hi)?;
        let orbit = Orbit::new(zd, cfg.orbit.anchor_q2, cfg.orbit.anchor_dq2)?;
        Ok(Pipeline { walker, orbit })
    }
}

fn cmd_model_check(cfg: &RunConfig) -> Result<()> {
    let model = Model::new(cfg.biped.clone());
    let n = cfg.biped.n();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);
    println!("chain: {n} links, g = {}", cfg.biped.g());
    println!("leg symmetry: ok (enforced when the parameters were loaded)");

    // Inertia symmetry / positive-definiteness and the sign symmetry of the
    // dynamics under (q, dq) -> (-q, -dq), on random states.
    let mut worst_sym = 0.0_f64;
    let mut worst_even = 0.0_f64;
    let mut worst_odd = 0.0_f64;
    let mut spd_ok = true;
    for _ in 0..1000 {
        let q1 = DVector::from_fn(n - 1, |_, _| rng.gen_range(-3.0..3.0));
        let dq1 = DVector::from_fn(n - 1, |_, _| rng.gen_range(-3.0..3.0));
        let s = State::new(q1, rng.gen_range(-3.0..3.0), dq1, rng.gen_range(-3.0..3.0));
        let neg = State::new(-&s.q1, -s.q2, -&s.dq1, -s.dq2);
        let mq = model.mass_matrix(&s);
        let scale = mq.amax();
        worst_sym = worst_sym.max((&mq - mq.transpose()).amax() / scale);
        worst_even = worst_even.max((model.mass_matrix(&neg) - &mq).amax() / scale);
        spd_ok &= mq.cholesky().is_some();
        let h = model.bias(&s);
        worst_odd = worst_odd.max((model.bias(&neg) + &h).amax() / h.amax().max(1.0));
    }

    // Unactuated swing must conserve total energy.
    let q1 = DVector::from_fn(n - 1, |_, _| rng.gen_range(-0.5..0.5));
    let dq1 = DVector::from_fn(n - 1, |_, _| rng.gen_range(-0.5..0.5));
    let s0 = State::new(q1, rng.gen_range(-0.5..0.5), dq1, rng.gen_range(-1.5..-0.5));
    let e0 = model.total_energy(&s0);
    let f = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
        let s = State::unpack(n, y);
        let dd = model.accel(&s, &DVector::zeros(n - 1)).unwrap();
        for i in 0..n {
            dy[i] = y[n + i];
            dy[n + i] = dd[i];
        }
    };
    let opts = OdeOptions { h_max: 0.02, ..OdeOptions::default() };
    let y1 = integrate_to(f, 0.0, &s0.pack(), 1.0, &opts)?;
    let drift = (model.total_energy(&State::unpack(n, &y1)) - e0).abs() / e0.abs().max(1.0);

    let checks = [
        ("mass-matrix symmetry", worst_sym, 1e-12),
        ("mass-matrix evenness in q", worst_even, 1e-12),
        ("bias oddness in (q, dq)", worst_odd, 1e-12),
        ("passive 1 s energy drift", drift, 1e-6),
    ];
    let mut failed = Vec::new();
    for (name, value, threshold) in checks {
        let ok = value < threshold;
        println!("{name}: {value:.3e} (threshold {threshold:.0e}) {}", verdict(ok));
        if !ok {
            failed.push(format!("{name} = {value:.3e}"));
        }
    }
    println!("mass-matrix positive-definiteness: {}", verdict(spd_ok));
    if !spd_ok {
        failed.push("mass matrix not positive definite".into());
    }
    if failed.is_empty() {
        println!("model-check: all invariants hold");
        Ok(())
    } else {
        Err(Error::numerical("model-check", failed.join("; ")))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn cmd_gait_check(cfg: &RunConfig) -> Result<()> {
    if cfg.vhc.theta1_i == 0.0 {
        println!("warning: trivial gait (zero step amplitude; the chain stands in place)");
    }
    let res = constraint_residuals(&cfg.biped, &cfg.vhc);
    println!("boundary residuals at q2 = {}:", cfg.vhc.theta1_i);
    for (i, r) in res.iter().enumerate() {
        println!("  [{i}] {r:+.6e}");
    }
    println!("residual max = {:.3e}", res.amax());
    if cfg.vhc.theta1_i > 0.0 {
        // Regularity: the reduced-dynamics denominator must keep its sign on
        // the tabulated interval, otherwise the constraint cannot be enforced
        // through the step.
        let model = Model::new(cfg.biped.clone());
        let gait = Gait::new(cfg.vhc.clone())?;
        let zd = ZeroDynamics::new(&model, &gait, cfg.orbit.lo, cfg.orbit.hi)?;
        let mut min_den = f64::INFINITY;
        let grid = 512;
        for i in 0..=grid {
            let q2 = cfg.orbit.lo + (cfg.orbit.hi - cfg.orbit.lo) * i as f64 / grid as f64;
            min_den = min_den.min(zd.coeffs(q2).denominator.abs());
        }
        println!(
            "regularity: min |denominator| = {min_den:.4} on [{}, {}]",
            cfg.orbit.lo, cfg.orbit.hi
        );
    }
    Ok(())
}

fn cmd_gait_solve(cfg: &RunConfig) -> Result<()> {
    if cfg.free.is_empty() {
        return Err(Error::config("[vhc].free", "no free parameters to solve for"));
    }
    let (refined, report) =
        solve_parameters(&cfg.biped, &cfg.vhc, &cfg.free, &SolveOptions::default())?;
    println!(
        "solve: {} iterations, residual {:.3e} -> {:.3e}",
        report.iterations, report.initial_residual, report.residual
    );
    let res = constraint_residuals(&cfg.biped, &refined);
    println!("refined residual max = {:.3e}", res.amax());
    let mut out = cfg.clone();
    out.vhc = refined;
    let path = cfg.output_dir.join("gait.cfg");
    fs::write(&path, out.emit())?;
    println!("refined gait written to {}", path.display());
    Ok(())
}

fn cmd_zerodyn(cfg: &RunConfig) -> Result<()> {
    let model = Model::new(cfg.biped.clone());
    let gait = Gait::new(cfg.vhc.clone())?;
    let zd = ZeroDynamics::new(&model, &gait, cfg.orbit.lo, cfg.orbit.hi)?;

    let grid = 512;
    let mut csv = String::from("q2,alpha1,alpha2,psi,potential\n");
    for i in 0..=grid {
        let q2 = cfg.orbit.lo + (cfg.orbit.hi - cfg.orbit.lo) * i as f64 / grid as f64;
        let c = zd.coeffs(q2);
        csv.push_str(&format!(
            "{q2:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            c.alpha1,
            c.alpha2,
            zd.psi(q2)?,
            zd.potential(q2)?
        ));
    }
    let path = cfg.output_dir.join("zerodyn.csv");
    fs::write(&path, csv)?;
    println!("reduced dynamics tabulated to {}", path.display());

    let (anchor_q2, anchor_dq2) = (cfg.orbit.anchor_q2, cfg.orbit.anchor_dq2);
    let c_star = zd.energy(anchor_q2, anchor_dq2)?;
    let (at, p_max) = zd.potential_max()?;
    println!(
        "integral level c* = {c_star:.6} through anchor ({anchor_q2}, {anchor_dq2}); \
         virtual potential peaks at {p_max:.6} (q2 = {at:.4})"
    );
    if c_star > p_max && anchor_dq2 < 0.0 {
        println!("orbit: feasible (the energy level clears the potential everywhere)");
    } else {
        println!("orbit: infeasible (the stance rotation would stall before touchdown)");
    }
    Ok(())
}

fn cmd_stabilize(cfg: &RunConfig) -> Result<()> {
    let t0 = Instant::now();
    let p = Pipeline::build(cfg)?;
    let n = cfg.biped.n();
    let (q, r) = cfg.icpm.weights(n);
    let design = icpm::synthesize(&p.walker, &p.orbit, &q, &r, 1e-6)?;

    let dim = 2 * n - 1;
    let z_row = DMatrix::from_fn(1, dim, |_, j| design.z_star[j]);
    for (name, matrix) in [
        ("z_star.txt", &z_row),
        ("A.txt", &design.a),
        ("B.txt", &design.b),
        ("K.txt", &design.k),
    ] {
        icpm::write_matrix(&cfg.output_dir.join(name), matrix)?;
    }

    let mut moduli: Vec<f64> =
        design.a.clone().complex_eigenvalues().iter().map(|l| l.norm()).collect();
    moduli.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    let listed: Vec<String> = moduli.iter().map(|m| format!("{m:.4}")).collect();
    println!("fixed point residual = {:.3e}", design.fixed_point_residual);
    println!("controllability rank = {}/{dim}", design.controllability_rank);
    println!("open-loop eigenvalue moduli: [{}]", listed.join(", "));
    println!(
        "open-loop spectral radius = {:.9} (the energy mode is not asymptotically stable)",
        design.open_loop_radius
    );
    println!("closed-loop spectral radius = {:.6}", design.closed_loop_radius);
    println!(
        "gain written to {} ({:.2}s)",
        cfg.output_dir.join("K.txt").display(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let p = Pipeline::build(cfg)?;
    let n = cfg.biped.n();
    let z_star = icpm::fixed_point(&p.walker, &p.orbit)?;

    let controller = if cfg.icpm.enabled {
        let (q, r) = cfg.icpm.weights(n);
        let design = icpm::synthesize(&p.walker, &p.orbit, &q, &r, 1e-6)?;
        println!(
            "section feedback active (closed-loop spectral radius {:.4})",
            design.closed_loop_radius
        );
        Some(design.controller()?)
    } else {
        println!("section feedback disabled (open-loop walk)");
        None
    };

    let mut z0 = z_star.clone();
    if cfg.sim.perturb > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);
        let dir = DVector::from_fn(2 * n - 1, |_, _| rng.gen_range(-1.0..1.0));
        z0 += cfg.sim.perturb * &dir / dir.norm();
        println!("initial section error: {:.3e} (seed {})", cfg.sim.perturb, cfg.sim.seed);
    }

    let opts = RunOptions {
        steps: cfg.sim.steps,
        feedback: controller.as_ref().map(|c| c as &dyn SectionFeedback),
        reference: Some(z_star.clone()),
        impulse_mode: cfg.controller.impulse_mode(),
        log_trajectory: true,
    };
    let run = p.walker.run_gait(&z0, &opts)?;

    fs::write(cfg.output_dir.join("trajectory.csv"), run.trajectory.to_csv())?;
    fs::write(cfg.output_dir.join("steps.csv"), step_records_csv(&run.records))?;

    let walked: f64 = run.records.iter().map(|r| r.duration).sum();
    let mut summary = String::new();
    summary.push_str(&format!("steps completed: {}\n", run.records.len()));
    summary.push_str(&format!("walked time: {walked:.6} s\n"));
    if let Some(first) = run.records.first() {
        summary.push_str(&format!("first step period: {:.6} s\n", first.duration));
        let drift = ((first.energy_end - first.energy_start) / first.energy_start).abs();
        summary.push_str(&format!("first step energy drift: {drift:.3e} relative\n"));
    }
    let final_error = biped::sim::section_error(n, &run.final_state, &z_star).norm();
    summary.push_str(&format!("final section error: {final_error:.6e}\n"));
    if let Some(f) = &run.failure {
        summary.push_str(&format!("failure at step {}: {}\n", f.step, f.failure));
    }
    fs::write(cfg.output_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("trajectory data written to {}", cfg.output_dir.display());

    match &run.failure {
        Some(f) => Err(Error::Step(f.failure.clone())),
        None => Ok(()),
    }
}
