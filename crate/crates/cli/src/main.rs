use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amr_core::harness::{
    emit_outputs, format_summary, run_demo1d, run_mms, run_spinodal, Experiment, ExperimentConfig,
};
use amr_core::restriction::{format_matrix, restriction_operator};
use amr_core::transfer::TransferMode;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "amr", about = "Quadtree finite elements with conservative coarsening")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Coarsening operator for the conserved field; overrides the config.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Injection,
    Conservative,
}

impl From<Mode> for TransferMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Injection => TransferMode::Injection,
            Mode::Conservative => TransferMode::Conservative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Basis {
    Linear,
    Quad,
}

#[derive(Subcommand)]
enum Command {
    /// Coarsen |cos(2πx)| + 10 on a uniform 1D mesh and print the three integrals.
    Demo1d {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        basis: Option<Basis>,
    },
    /// Manufactured-solution diffusion with adaptive coarsening.
    Mms {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Cahn–Hilliard spinodal decomposition with interface tracking.
    Spinodal {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the 1D local restriction matrix.
    Restriction {
        #[command(subcommand)]
        action: Option<RestrictionAction>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RestrictionAction {
    Dump {
        #[arg(long)]
        p: usize,
        /// Gauss points per element; defaults to p + 1.
        #[arg(long)]
        nq: Option<usize>,
    },
}

fn load(path: Option<&Path>, default: Experiment, degree: usize) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::new(default, degree),
    };
    if cfg.experiment != default {
        bail!("config describes {:?}, not {:?}", cfg.experiment, default);
    }
    Ok(cfg)
}

fn configure(run: &RunArgs, experiment: Experiment) -> Result<ExperimentConfig> {
    let mut cfg = load(run.config.as_deref(), experiment, 1)?;
    if let Some(m) = run.mode {
        cfg.transfer.phi = m.into();
    }
    Ok(cfg)
}

fn finish(summary: &[(String, String)], out: Option<&Path>, failures: Vec<String>) -> Result<ExitCode> {
    print!("{}", format_summary(summary));
    if let Some(dir) = out {
        if !dir.join("summary.txt").exists() {
            emit_outputs(dir, None, summary)?;
        }
    }
    for f in &failures {
        eprintln!("check failed: {f}");
    }
    Ok(if failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Demo1d { run, basis } => {
            let mut cfg = configure(&run, Experiment::Demo1d)?;
            if let Some(b) = basis {
                cfg.degree = match b {
                    Basis::Linear => 1,
                    Basis::Quad => 2,
                };
            }
            let r = run_demo1d(&cfg)?;
            let mut failures = Vec::new();
            if (r.conservative - r.original).abs() > 1e-11 {
                failures.push(format!("conservative integral differs by {:e}", r.conservative - r.original));
            }
            finish(&r.summary(), run.out.as_deref(), failures)
        }
        Command::Mms { run } => {
            let cfg = configure(&run, Experiment::Mms)?;
            let r = run_mms(&cfg, run.out.as_deref())?;
            let mut failures = Vec::new();
            if !r.l2_error.is_finite() {
                failures.push("non-finite error".into());
            }
            if r.mode == TransferMode::Conservative && r.final_drift.abs() > 1e-11 {
                failures.push(format!("mass drift {:e} exceeds 1e-11", r.final_drift));
            }
            finish(&r.summary(), run.out.as_deref(), failures)
        }
        Command::Spinodal { run } => {
            let cfg = configure(&run, Experiment::Spinodal)?;
            let r = run_spinodal(&cfg, run.out.as_deref())?;
            let mut failures = Vec::new();
            if r.diagnostics.rows().iter().any(|row| !row.mass.is_finite() || !row.energy.is_finite()) {
                failures.push("non-finite diagnostics".into());
            }
            if r.mode == TransferMode::Conservative && r.max_abs_drift > 1e-10 {
                failures.push(format!("mass drift {:e} exceeds 1e-10", r.max_abs_drift));
            }
            finish(&r.summary(), run.out.as_deref(), failures)
        }
        Command::Restriction { action, config } => {
            let (p, nq) = match (action, config) {
                (Some(RestrictionAction::Dump { p, nq }), _) => (p, nq.unwrap_or(p + 1)),
                (None, Some(path)) => {
                    let cfg = ExperimentConfig::load(&path).with_context(|| format!("reading {}", path.display()))?;
                    (cfg.degree, cfg.quadrature())
                }
                (None, None) => bail!("use `restriction dump --p <degree>` or `restriction --config <file>`"),
            };
            print!("{}", format_matrix(&*restriction_operator(p, nq, nq)?));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
