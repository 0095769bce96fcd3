//! `dtnet`: assemble DtN matrices, draw datasets, train the surrogates and tabulate runs.

mod artifacts;
mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dtnet::fem::DtnBasis;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "dtnet", version, about = "DtN operators on the unit disk and their neural surrogates")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `seeds.data`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides `mesh.h`.
    #[arg(long, global = true, value_name = "H")]
    mesh_h: Option<f64>,
    /// Size of the worker pool.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assemble the DtN matrix of the configured conductivity and check its invariants.
    Dtn {
        /// Basis of the written matrix.
        #[arg(long, value_enum, default_value_t = DtnBasisArg::Raw)]
        dtn_basis: DtnBasisArg,
    },
    /// Draw boundary samples and, for the Calderón pipelines, the conductivity dataset.
    Sample,
    /// Run the configured pipeline.
    Train,
    /// Run the I1/I2/I3 error decomposition over `d_values`.
    Decompose,
    /// Verify and tabulate finished runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Directory receiving summary.csv and summary.md.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DtnBasisArg {
    Raw,
    Orthonormal,
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = ExperimentConfig::parse(&text)?.resolve(cli.seed, cli.mesh_h);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Io(e.to_string()))?;
    }
    if let Command::Report { runs, out } = &cli.command {
        return if cli.dry_run {
            println!("report: would tabulate {} runs into {}", runs.len(), out.display());
            Ok(())
        } else {
            commands::cmd_report(runs, out)
        };
    }
    let cfg = load_config(&cli)?;
    if cli.dry_run {
        println!("{}", cfg.to_pretty());
        println!("config_hash: {}", cfg.hash());
        return Ok(());
    }
    match cli.command {
        Command::Dtn { dtn_basis } => commands::cmd_dtn(
            &cfg,
            match dtn_basis {
                DtnBasisArg::Raw => DtnBasis::Raw,
                DtnBasisArg::Orthonormal => DtnBasis::Orthonormal,
            },
        ),
        Command::Sample => commands::cmd_sample(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Decompose => commands::cmd_decompose(&cfg),
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dtnet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
