mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] boolnet::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Parser)]
#[command(name = "boolnet", version, about = "Boolean-model connectivity network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Override any config key, e.g. `--set regime.mark.r_max=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    replicas: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replica worker threads; defaults to available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Omit the timestamp from run.json so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a marked configuration, build the network, write points and edges.
    Simulate(Common),
    /// Write the empirical mark and connectivity measures and the reference measure.
    Measures(Common),
    /// Evaluate rate functions on measure files.
    Rate {
        #[command(flatten)]
        common: Common,
        /// Mark measure (JSON).
        #[arg(long)]
        omega: PathBuf,
        /// Connectivity measure (CSV) on the same partition as `omega`.
        #[arg(long)]
        pi: Option<PathBuf>,
        /// Reference mark measure (JSON); computed from the config when absent.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Fit the log-probability decay slope of a rare event over the lambda grid.
    LdpVerify(Common),
    /// Compare the average |E|/λ of soft networks with its quadrature limit.
    MeanDegree(Common),
    /// Compare simulated counts with the exact Poisson and binomial laws.
    OracleCheck(Common),
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let overrides = Overrides {
            set: self.set.clone(),
            seed: self.seed,
            lambda: self.lambda,
            replicas: self.replicas,
            out: self.out.clone(),
        };
        ExperimentConfig::load(&self.config, &overrides)
    }

    fn init_workers(&self) -> Result<(), CliError> {
        if let Some(n) = self.workers {
            if n == 0 {
                return Err(CliError::Config("--workers: must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(format!("--workers: {e}")))?;
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<commands::Status, CliError> {
    let (common, name) = match &cli.command {
        Command::Simulate(c) => (c, "simulate"),
        Command::Measures(c) => (c, "measures"),
        Command::Rate { common, .. } => (common, "rate"),
        Command::LdpVerify(c) => (c, "ldp-verify"),
        Command::MeanDegree(c) => (c, "mean-degree"),
        Command::OracleCheck(c) => (c, "oracle-check"),
    };
    common.init_workers()?;
    let cfg = common.load()?;
    let mut ctx = commands::Context::new(cfg, name, common.deterministic)?;
    let status = match &cli.command {
        Command::Simulate(_) => commands::simulate(&mut ctx)?,
        Command::Measures(_) => commands::measures(&mut ctx)?,
        Command::Rate { omega, pi, reference, .. } => {
            commands::rate(&mut ctx, omega, pi.as_deref(), reference.as_deref())?
        }
        Command::LdpVerify(_) => commands::ldp_verify(&mut ctx)?,
        Command::MeanDegree(_) => commands::mean_degree(&mut ctx)?,
        Command::OracleCheck(_) => commands::oracle_check(&mut ctx)?,
    };
    ctx.finish(&status)?;
    Ok(status)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(status) => {
            println!("{}", status.verdict);
            if status.failed() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("boolnet: {e}");
            ExitCode::from(2)
        }
    }
}
