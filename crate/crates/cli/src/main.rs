//! `fracstep` — driver for the four-step solver.
//!
//! Subcommands: `run` (integrate and write ledger/snapshots/report),
//! `validate` (configuration and model diagnostics), `study` (τ-refinement
//! errors per field), `check` (re-verify a written run directory).
//! Exit codes: 0 success, 2 invalid input, 3 numeric failure, 4 violated
//! invariant.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use fracstep_cli::config::{self, ConfigError, RunConfig};
use fracstep_cli::{check, report, snapshot};
use fracstep_core::materials::{validate_model, SampleSpec};
use fracstep_core::stepper::{self, tau_admissible};
use fracstep_core::{diagnostics, SolverError};

#[derive(Parser)]
#[command(
    name = "fracstep",
    version,
    about = "Semi-implicit four-step solver for coupled thermo-visco-elastic evolution"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario and write ledger.csv, snapshots, and run_report.txt.
    Run(RunArgs),
    /// Parse and validate a configuration; report the admissible time step.
    Validate {
        /// Scenario description (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Time-step refinement study: successive-difference errors per field.
    Study(StudyArgs),
    /// Re-verify a directory written by `run`.
    Check {
        /// Directory containing config.toml, ledger.csv, and snapshots.
        dir: PathBuf,
        /// Random damage competitors per kept state (0 disables the probe).
        #[arg(long, default_value_t = 200)]
        semistability_trials: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the configured `output.dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the time step (re-validated against the scenario).
    #[arg(long)]
    tau: Option<f64>,
    /// Force strict mode: the first violated invariant aborts the run.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct StudyArgs {
    /// Scenario description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Strictly decreasing time steps, comma separated (default: 4τ, 2τ, τ
    /// for the configured τ).
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<SolverError>() {
        return match e {
            SolverError::InvalidArgument(_) | SolverError::DomainError(_) => 2,
            SolverError::NumericFailure { .. } => 3,
            SolverError::ConsistencyFailure { .. } => 4,
        };
    }
    if err.downcast_ref::<ConfigError>().is_some() || err.downcast_ref::<std::io::Error>().is_some()
    {
        return 2;
    }
    2
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Run(args) => cmd_run(args),
        Command::Validate { config } => cmd_validate(&config),
        Command::Study(args) => cmd_study(args),
        Command::Check {
            dir,
            semistability_trials,
        } => cmd_check(&dir, semistability_trials),
    }
}

/// Load a configuration and apply command-line overrides, re-running the
/// whole validation pass so an override cannot smuggle in an invalid value.
fn load_with_overrides(
    path: &Path,
    tau: Option<f64>,
    strict: bool,
    out_dir: Option<&Path>,
) -> Result<RunConfig, ConfigError> {
    let mut cfg = config::load(path)?;
    let mut revalidate = false;
    if let Some(t) = tau {
        cfg.scheme.tau = t;
        revalidate = true;
    }
    if strict {
        cfg.scheme.strict = true;
        revalidate = true;
    }
    if let Some(d) = out_dir {
        cfg.output.dir = d.display().to_string();
    }
    if revalidate {
        let issues = config::validate(&cfg);
        if !issues.is_empty() {
            return Err(ConfigError::Invalid(issues));
        }
    }
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let cfg = load_with_overrides(
        &args.config,
        args.tau,
        args.strict,
        args.out_dir.as_deref(),
    )?;
    let out = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&out)
        .with_context(|| format!("output directory {} must be writable", out.display()))?;

    let (pb, initial) = config::build(&cfg)?;
    let model_report = validate_model(pb.model.as_ref(), &SampleSpec::default())?;
    let started = Instant::now();
    let traj = stepper::run(&pb, &initial)?;
    let wall = started.elapsed().as_secs_f64();

    std::fs::write(out.join("config.toml"), config::emit(&cfg))
        .with_context(|| "writing config.toml")?;
    report::write_ledger(&out.join("ledger.csv"), &traj.ledger)
        .with_context(|| "writing ledger.csv")?;
    for s in &traj.states {
        let k = (s.t / pb.params.tau).round() as usize;
        snapshot::write(&out.join(snapshot::file_name(k)), &pb.mesh, s)
            .with_context(|| format!("writing snapshot {k}"))?;
    }
    let e_mc_initial = diagnostics::mech_chem_energy(&pb, &initial)?;
    let summary = report::summarize(&pb, &traj, e_mc_initial);
    let text = report::run_report(&pb, &traj, &model_report, &summary, wall);
    std::fs::write(out.join("run_report.txt"), &text).with_context(|| "writing run_report.txt")?;

    print!("{text}");
    println!(
        "run: {} steps, {} snapshots -> {}",
        traj.ledger.len(),
        traj.states.len(),
        out.display()
    );
    if !model_report.passed() {
        let worst = model_report
            .entries
            .iter()
            .find(|e| !e.passed)
            .map(|e| format!("{}: {}", e.name, e.detail))
            .unwrap_or_default();
        return Err(SolverError::inconsistent("model validation", worst).into());
    }
    if !summary.ok() {
        let worst = summary
            .lines
            .iter()
            .find(|l| !l.pass)
            .map(|l| l.render())
            .unwrap_or_default();
        return Err(SolverError::inconsistent("run invariants", worst).into());
    }
    Ok(())
}

fn cmd_validate(path: &Path) -> anyhow::Result<()> {
    let cfg = config::load(path)?;
    let (pb, _initial) = config::build(&cfg)?;
    let model_report = validate_model(pb.model.as_ref(), &SampleSpec::default())?;
    let bound = tau_admissible(pb.model.as_ref(), pb.params.t_end);
    println!(
        "configuration OK: model {}, {} nodes, {} steps of tau = {}",
        pb.model.name(),
        pb.mesh.n_nodes(),
        (pb.params.t_end / pb.params.tau).round() as usize,
        pb.params.tau
    );
    println!(
        "tau_admissible = {bound} (tau/tau_admissible = {:.3e})",
        pb.params.tau / bound
    );
    println!("model validation (sampled):");
    for e in &model_report.entries {
        println!(
            "  {} {}: {}",
            if e.passed { "PASS" } else { "FAIL" },
            e.name,
            e.detail
        );
    }
    if !model_report.passed() {
        return Err(SolverError::invalid("model validation failed; see report above").into());
    }
    Ok(())
}

fn cmd_study(args: StudyArgs) -> anyhow::Result<()> {
    let cfg = config::load(&args.config)?;
    let base = cfg.scheme.tau;
    let taus = args
        .taus
        .unwrap_or_else(|| vec![4.0 * base, 2.0 * base, base]);
    // Study runs are exploratory: never strict, and every state is kept so
    // that successive trajectories share comparison times.
    let make = |tau: f64| -> Result<_, SolverError> {
        let mut c = cfg.clone();
        c.scheme.tau = tau;
        c.scheme.strict = false;
        c.output.snapshot_stride = 1;
        config::build(&c)
    };
    let rows = diagnostics::convergence_study(&make, &taus)?;
    println!(
        "{:>12} {:>12} {:>13} {:>13} {:>13} {:>13}",
        "tau_coarse", "tau_fine", "err_u", "err_chi", "err_c", "err_theta"
    );
    for r in &rows {
        println!(
            "{:>12} {:>12} {:>13.6e} {:>13.6e} {:>13.6e} {:>13.6e}",
            r.tau_coarse, r.tau_fine, r.err_u, r.err_chi, r.err_c, r.err_theta
        );
    }
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        println!(
            "ratios {} -> {}: u {:.2}, chi {:.2}, c {:.2}, theta {:.2}",
            a.tau_fine,
            b.tau_fine,
            a.err_u / b.err_u,
            a.err_chi / b.err_chi,
            a.err_c / b.err_c,
            a.err_theta / b.err_theta
        );
    }
    Ok(())
}

fn cmd_check(dir: &Path, semistability_trials: usize) -> anyhow::Result<()> {
    let outcome = check::check_dir(dir, semistability_trials)?;
    for l in &outcome.lines {
        println!("{}", l.render());
    }
    if outcome.ok() {
        println!("check: PASS ({})", dir.display());
        Ok(())
    } else {
        let worst = outcome
            .lines
            .iter()
            .find(|l| !l.pass)
            .map(|l| l.render())
            .unwrap_or_default();
        Err(SolverError::inconsistent("trajectory re-verification", worst).into())
    }
}
