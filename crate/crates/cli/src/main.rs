//! `pjrm`: simulate, invert, and analyze time-lapse post-stack surveys with
//! joint or independent probabilistic recovery.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use pjrm_cli::{commands, config::RunConfig};
use pjrm_core::solver::{Formulation, Mode};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Joint,
    Independent,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormulationArg {
    Weak,
    Strong,
}

#[derive(Parser)]
#[command(name = "pjrm", version, about = "probabilistic joint recovery for time-lapse post-stack monitoring")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate ground-truth models and noisy survey panels from a config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert survey panels into posterior samples and checkpoints.
    Invert {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding survey_XX.pjrm panels (from `simulate`).
        #[arg(long)]
        surveys: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's recovery mode.
        #[arg(long)]
        mode: Option<ModeArg>,
        /// Override the config's formulation.
        #[arg(long)]
        formulation: Option<FormulationArg>,
    },
    /// Time-lapse maps and metrics from inversion results plus truths.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Directory with posterior samples (from `invert`).
        #[arg(long)]
        results: PathBuf,
        /// Directory with truths and masks (from `simulate`).
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dot-product test of the modeling operator across grid sizes.
    CheckAdjoint {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Finite-difference verification of every analytic gradient.
    CheckGrad {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Full pipeline: simulate, invert, analyze into one output directory.
    Repro {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<ModeArg>,
        #[arg(long)]
        formulation: Option<FormulationArg>,
    },
}

fn load_config(
    path: &PathBuf,
    mode: Option<ModeArg>,
    formulation: Option<FormulationArg>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(m) = mode {
        cfg.mode = match m {
            ModeArg::Joint => Mode::Joint,
            ModeArg::Independent => Mode::Independent,
        };
    }
    if let Some(f) = formulation {
        cfg.formulation = match f {
            FormulationArg::Weak => Formulation::Weak,
            FormulationArg::Strong => Formulation::Strong,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Simulate { config, out } => {
            let cfg = load_config(&config, None, None)?;
            commands::simulate(&cfg, &out)?;
            Ok(true)
        }
        Cmd::Invert {
            config,
            surveys,
            out,
            mode,
            formulation,
        } => {
            let cfg = load_config(&config, mode, formulation)?;
            commands::invert(&cfg, &surveys, &out)?;
            Ok(true)
        }
        Cmd::Analyze {
            config,
            results,
            truth,
            out,
        } => {
            let cfg = load_config(&config, None, None)?;
            commands::analyze(&cfg, &results, &truth, &out)?;
            Ok(true)
        }
        Cmd::CheckAdjoint { seed } => commands::check_adjoint(seed),
        Cmd::CheckGrad { seed } => commands::check_grad(seed),
        Cmd::Repro {
            config,
            out,
            mode,
            formulation,
        } => {
            let cfg = load_config(&config, mode, formulation)?;
            commands::repro(&cfg, &out)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
