use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use parareal_skin::experiment::{exit_code, run_experiment, Experiment, ExperimentConfig, RunOptions};
use parareal_skin::parareal::Backend;

#[derive(Parser)]
#[command(version, about = "Parareal experiments on brick-and-mortar diffusion problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; built-in defaults if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// Cores available to the concurrent backend.
    #[arg(long, global = true)]
    cores: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Defect per iteration for each N_t.
    Convergence,
    /// Jumping versus constant coefficients.
    Coefficients,
    /// Coarse, fine and Parareal errors at every boundary.
    ErrorOverTime,
    /// Measured and predicted speedup.
    Speedup,
    /// Weak-scaling ladder.
    WeakScaling,
    /// Fine solution snapshots as .field files.
    Export,
}

#[derive(ValueEnum, Clone, Copy)]
enum BackendArg {
    Seq,
    Par,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let experiment = match cli.command {
        Command::Convergence => Experiment::Convergence,
        Command::Coefficients => Experiment::Coefficients,
        Command::ErrorOverTime => Experiment::ErrorOverTime,
        Command::Speedup => Experiment::Speedup,
        Command::WeakScaling => Experiment::WeakScaling,
        Command::Export => Experiment::Export,
    };
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    };
    let opts = RunOptions {
        out_dir: cli.out,
        backend: cli.backend.map(|b| match b {
            BackendArg::Seq => Backend::Sequential,
            BackendArg::Par => Backend::Concurrent,
        }),
        cores: cli.cores,
    };
    match cfg.and_then(|cfg| run_experiment(experiment, &cfg, &opts)) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
