//! `kconsensus`: command-line pipeline for the kinetic consensus experiments.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use consensus_core::neural::Target;
use consensus_core::sdre::ControllerKind;

pub mod commands;
pub mod config;
pub mod plot;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] consensus_core::Error),
}

impl CliError {
    /// 1 validation, 2 numerical failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(e) if e.is_io() => 3,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Value,
    Control,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Value => Target::Value,
            TargetArg::Control => Target::Control,
        }
    }
}

impl TargetArg {
    pub fn name(self) -> &'static str {
        match self {
            TargetArg::Value => "value",
            TargetArg::Control => "control",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kconsensus", version, about = "SDRE and neural feedback for kinetic opinion consensus")]
pub struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, training and the kinetic simulation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct ModelPaths {
    /// Value network (default `<out_dir>/model_value.json`).
    #[arg(long)]
    pub value_model: Option<PathBuf>,
    /// Control network (default `<out_dir>/model_control.json`).
    #[arg(long)]
    pub control_model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample states, label them with the SDRE feedback and write the dataset.
    GenData {
        #[arg(long)]
        n: Option<usize>,
        /// Dataset CSV (default `<out_dir>/dataset.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one network and write it with its loss history.
    Train {
        #[arg(long, value_enum, default_value = "value")]
        target: TargetArg,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model file (default `<out_dir>/model_<target>.json`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mu_dv: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train over the configured grid and rank by validation MRE.
    GridSearch {
        #[arg(long, value_enum, default_value = "value")]
        target: TargetArg,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Replaces the configured `mu_dv` axis with a single value.
        #[arg(long)]
        mu_dv: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Goodness-of-fit table against SDRE labels on a uniform grid.
    Eval {
        #[command(flatten)]
        models: ModelPaths,
        #[arg(long)]
        grid_n: Option<usize>,
        /// Output CSV (default `<out_dir>/table1.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate one pair under a controller; writes the trajectory and gap plot.
    SimulateBinary {
        #[arg(long)]
        controller: Option<ControllerKind>,
        #[arg(long, allow_hyphen_values = true)]
        xi0: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        xj0: Option<f64>,
        #[command(flatten)]
        models: ModelPaths,
    },
    /// Monte Carlo Boltzmann simulation of the population.
    SimulateKinetic {
        #[arg(long)]
        controller: Option<ControllerKind>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        n_agents: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        models: ModelPaths,
    },
    /// Render SVG plots from trajectory, histogram, moment or history CSVs.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output directory (default `<out_dir>/plots`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Loads the configuration and applies the global flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.apply_seed();
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(g) = cli.gamma {
        cfg.model.gamma = g;
    }
    if let Some(b) = cli.beta {
        cfg.model.beta = b;
    }
    Ok(cfg)
}

/// Runs one command and returns its printable summary.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let cfg = resolve_config(&cli)?;
    match cfg.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
            pool.install(|| commands::dispatch(cli.command, cfg))
        }
        None => commands::dispatch(cli.command, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        use consensus_core::Error;
        assert_eq!(CliError::Validation("x".into()).exit_code(), 1);
        assert_eq!(CliError::from(Error::InvalidConfig("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(Error::NonFinite("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::RejectionStall { rate: 0.0 }).exit_code(), 2);
        let io = Error::io("p", std::io::Error::other("boom"));
        assert_eq!(CliError::from(io).exit_code(), 3);
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\nout_dir = \"a\"\n[model]\ngamma = 0.1\n").unwrap();
        let cli = Cli::parse_from([
            "kconsensus",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "9",
            "--beta",
            "-2",
            "--out-dir",
            "b",
            "gen-data",
        ]);
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.model.gamma, 0.1);
        assert_eq!(cfg.model.beta, -2.0);
        assert_eq!(cfg.out_dir, PathBuf::from("b"));
        assert_eq!((cfg.dataset.seed, cfg.train.seed, cfg.kinetic.seed), (9, 9, 9));
    }

    #[test]
    fn controller_names_parse() {
        let cli = Cli::parse_from(["kconsensus", "simulate-binary", "--controller", "nn_value", "--xi0", "-0.3"]);
        match cli.command {
            Command::SimulateBinary { controller, xi0, .. } => {
                assert_eq!(controller, Some(ControllerKind::NnValue));
                assert_eq!(xi0, Some(-0.3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Cli::try_parse_from(["kconsensus", "simulate-binary", "--controller", "bogus"]).is_err());
    }
}
