//! `qns` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or config, 2 runtime failure
//! (vacuum, non-finite state, rejected step, I/O), 3 a `check` threshold failed.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use qns_core::experiments::{
    balance_audit, delta_study, epsilon_sweep, galerkin_study, identity_battery, library_samples, SweepOptions,
};
use qns_core::fields::{InitialProfile, PhysParams, PositivityMode};
use qns_core::functionals::{norm_dashboard, CutoffSpec, NormExponents, NORM_NAMES};
use qns_core::integrator::{simulate, Formulation, GridSpec, RunConfig, TimeStep};
use qns_core::io::{self, fmt_float, parse_config, ConfigFile};
use qns_core::par::{self, Execution};
use qns_core::QnsError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

/// Worker thread count for parallel sweeps and diagnostics.
pub const THREADS_ENV: &str = "QNS_THREADS";

/// Thresholds applied by `qns check`.
pub const BOHM_TOL: f64 = 1e-8;
pub const PAIRING_TOL: f64 = 1e-8;
pub const BD_IDENTITY_TOL: f64 = 1e-10;
/// Balance residuals relative to the largest dissipation rate of the audit run.
pub const BALANCE_TOL: f64 = 1e-3;

#[derive(Parser, Debug)]
#[command(name = "qns", version, about = "Quantum Navier-Stokes simulator on the periodic torus")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one configuration and write diagnostics and snapshots.
    Run {
        config: PathBuf,
        /// Override `output.directory`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter studies around one configuration.
    Sweep(SweepArgs),
    /// Identity battery and balance audit against fixed thresholds.
    Check {
        #[arg(long, default_value_t = 128)]
        resolution: usize,
    },
    /// Print the diagnostics dashboard of the initial condition.
    Norms { config: PathBuf },
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("study").required(true).multiple(false).args(["eps", "galerkin", "delta"])))]
struct SweepArgs {
    config: PathBuf,
    /// Quantum coefficients for the semiclassical sweep.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Galerkin mode caps, increasing.
    #[arg(long, value_delimiter = ',')]
    galerkin: Option<Vec<usize>>,
    /// Damping coefficients, decreasing (needs formulation = "eqw").
    #[arg(long, value_delimiter = ',')]
    delta: Option<Vec<f64>>,
    /// Leading eps values left out of the slope fit.
    #[arg(long, default_value_t = 0)]
    fit_skip: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Error(QnsError),
    Check(String),
}

impl From<QnsError> for Failure {
    fn from(e: QnsError) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn exit_code(e: &QnsError) -> i32 {
    if e.is_runtime() || matches!(e, QnsError::Io(_) | QnsError::Json(_)) {
        EXIT_RUNTIME
    } else {
        EXIT_INVALID
    }
}

fn configure_threads_from_env() -> Result<(), QnsError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| QnsError::param(THREADS_ENV, format!("expected a positive integer, got `{v}`")))?;
        par::configure_threads(n);
    }
    Ok(())
}

/// Parse arguments, dispatch and return the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    if let Err(e) = configure_threads_from_env() {
        let _ = writeln!(err, "error: {e}");
        return EXIT_INVALID;
    }
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let result = match cli.command {
        Command::Run { config, out: dir } => cmd_run(&config, dir.as_deref(), exec, out),
        Command::Sweep(a) => cmd_sweep(&a, exec, out),
        Command::Check { resolution } => cmd_check(resolution, exec, out),
        Command::Norms { config } => cmd_norms(&config, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Error(e)) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
        Err(Failure::Check(msg)) => {
            let _ = writeln!(err, "check failed: {msg}");
            EXIT_CHECK
        }
    }
}

fn load(path: &Path, exec: Execution) -> Result<(ConfigFile, RunConfig), QnsError> {
    let file = parse_config(path)?;
    let mut cfg = file.to_run_config()?;
    cfg.execution = exec;
    Ok((file, cfg))
}

fn cmd_run(path: &Path, dir: Option<&Path>, exec: Execution, out: &mut dyn Write) -> Result<(), Failure> {
    let (file, cfg) = load(path, exec)?;
    let dir = dir.map(Path::to_path_buf).unwrap_or(file.output.directory.clone());
    let traj = simulate(&cfg)?;
    io::write_run_outputs(&traj, &dir, &file.output.formats)?;
    let last = traj.final_state();
    writeln!(
        out,
        "{} steps, {} snapshots, t = {}, output in {}",
        traj.steps,
        traj.snapshots.len(),
        last.time,
        dir.display()
    )?;
    if traj.construction_regime() {
        writeln!(out, "note: eps < nu in the effective-velocity system (negative quantum coefficient)")?;
    }
    match traj.failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn cmd_sweep(a: &SweepArgs, exec: Execution, out: &mut dyn Write) -> Result<(), Failure> {
    let (file, cfg) = load(&a.config, exec)?;
    let dir = a.out.clone().unwrap_or(file.output.directory.clone());
    if let Some(eps) = &a.eps {
        let opts = SweepOptions {
            phi: None,
            fit_skip: a.fit_skip,
            execution: exec,
        };
        let r = epsilon_sweep(&cfg, eps, &opts)?;
        io::write_report(&dir, &r, &io::sweep_table_csv(&r))?;
        match r.slope {
            Some(s) => writeln!(out, "slope of log Q against log eps: {s:.4} ({} points)", r.fit_points)?,
            None => writeln!(out, "slope unavailable: {} usable points", r.fit_points)?,
        }
    } else {
        let r = if let Some(caps) = &a.galerkin {
            galerkin_study(&cfg, caps, exec)?
        } else {
            let deltas = a.delta.as_ref().expect("clap enforces one study");
            delta_study(&cfg, deltas, exec)?
        };
        io::write_report(&dir, &r, &io::refinement_table_csv(&r))?;
        for g in &r.gaps {
            writeln!(out, "{} -> {}: gap {}", g.from, g.to, fmt_float(g.total))?;
        }
        writeln!(out, "monotone: {}", r.monotone)?;
    }
    writeln!(out, "report in {}", dir.display())?;
    Ok(())
}

fn audit_config(exec: Execution) -> RunConfig {
    RunConfig {
        grid: GridSpec {
            dim: 1,
            points: 64,
            length: 1.0,
        },
        physics: PhysParams::default(),
        initial: InitialProfile::CosineBump {
            mean: 2.0,
            amplitude: 0.5,
            velocity_amplitude: 0.5,
            mode: 1,
        },
        formulation: Formulation::Eq2,
        final_time: 0.1,
        time_step: TimeStep::Fixed { dt: 2.5e-4 },
        galerkin_modes: None,
        cadence: 1,
        positivity: PositivityMode::Strict,
        seed: 0,
        execution: exec,
    }
}

fn cmd_check(resolution: usize, exec: Execution, out: &mut dyn Write) -> Result<(), Failure> {
    let samples = library_samples(resolution)?;
    let ids = identity_battery(&samples, exec)?;
    let mut failed = Vec::new();
    let mut line = |out: &mut dyn Write, name: &str, value: f64, tol: f64| -> std::io::Result<()> {
        let ok = value <= tol;
        if !ok {
            failed.push(name.to_string());
        }
        writeln!(out, "{:<4} {name}: {value:.3e} (tolerance {tol:.0e})", if ok { "ok" } else { "FAIL" })
    };
    line(out, "bohm identity", ids.max_bohm, BOHM_TOL)?;
    line(out, "quantum pairing", ids.max_pairing, PAIRING_TOL)?;
    line(out, "bd-energy decomposition", ids.max_bd_energy, BD_IDENTITY_TOL)?;

    let cfg = audit_config(exec);
    let traj = simulate(&cfg)?.into_result()?;
    let audit = balance_audit(&traj, exec)?;
    let k = if audit.kappa == audit.kappa_candidates[1] { 1 } else { 0 };
    let e_scale = audit.max_dissipation.max(f64::MIN_POSITIVE);
    let b_scale = traj.records.iter().fold(0.0f64, |m, r| m.max(r.bd_dissipation.abs())).max(f64::MIN_POSITIVE);
    line(out, "energy balance", audit.max_energy_residual[k] / e_scale, BALANCE_TOL)?;
    line(out, "bd balance", audit.max_bd_balanced / b_scale, BALANCE_TOL)?;
    let expected = 2.0 * cfg.physics.nu;
    let kappa_ok = audit.kappa == expected;
    if !kappa_ok {
        failed.push("dissipation coefficient".into());
    }
    writeln!(
        out,
        "{:<4} dissipation coefficient: {} (residuals {:.3e} for nu, {:.3e} for 2 nu)",
        if kappa_ok { "ok" } else { "FAIL" },
        audit.kappa,
        audit.max_energy_residual[0],
        audit.max_energy_residual[1]
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failed.join(", ")))
    }
}

fn cmd_norms(path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let (_, cfg) = load(path, Execution::Sequential)?;
    let state = cfg.initial_state()?;
    let params = cfg.effective_params();
    let exps = NormExponents::from_k(params.cold_k);
    let r = norm_dashboard(&state, &params, &exps, &CutoffSpec)?;
    for (name, v) in [
        ("mass", r.mass),
        ("energy", r.energy),
        ("energy_dissipation", r.energy_dissipation),
        ("bd_entropy", r.bd_entropy),
        ("bd_dissipation", r.bd_dissipation),
        ("min_n", r.min_n),
        ("max_n", r.max_n),
    ] {
        writeln!(out, "{name} {}", fmt_float(v))?;
    }
    for (name, v) in NORM_NAMES.iter().zip(r.norms) {
        writeln!(out, "{name} {}", fmt_float(v))?;
    }
    Ok(())
}
