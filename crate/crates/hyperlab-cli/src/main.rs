use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hyperlab_cli::commands::{self, CmdError};
use hyperlab_cli::config::RunConfig;

/// Numerical laboratory for delay-robust boundary control of two coupled
/// hyperbolic transport equations.
#[derive(Parser)]
#[command(name = "hyperlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file (key = value format, see the config reference).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `output.dir`, defaults to `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the backstepping kernels and report residuals.
    Kernels,
    /// Run the closed-loop simulation and write the trace.
    Simulate,
    /// Count right-half-plane roots of the closed-loop characteristic
    /// function.
    Roots,
    /// Sweep delta, K or rho and summarize stability and decay per value.
    Sweep,
    /// Cross-validate the solver, the transform and the neutral reduction.
    Verify,
}

fn run(cli: &Cli) -> Result<(), CmdError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CmdError::Config("--config <path> is required".into()))?;
    let config = RunConfig::from_path(config_path)?;
    let out = cli
        .out
        .clone()
        .or_else(|| {
            config
                .string_opt("output.dir")
                .ok()
                .flatten()
                .map(PathBuf::from)
        })
        .unwrap_or_else(|| PathBuf::from("out"));
    let workers = if cli.workers == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        cli.workers
    };

    match cli.command {
        Command::Kernels => commands::cmd_kernels(&config, &out),
        Command::Simulate => commands::cmd_simulate(&config, &out),
        Command::Roots => commands::cmd_roots(&config, &out),
        Command::Sweep => commands::cmd_sweep(&config, &out, workers),
        Command::Verify => commands::cmd_verify(&config, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
