//! Command-line front end: simulate, isometrize, sweep, verify.
//!
//! Every failure maps to a stable process exit code via `Error::exit_code`,
//! so scripts can branch on the class of failure without parsing stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use resembed::harness::commands::{self, RunArgs};

#[derive(Parser)]
#[command(
    name = "resembed",
    version,
    about = "Reservoir synchronization maps: drive, conjugate to isometry, certify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunCli {
    /// Experiment config (TOML)
    #[arg(long, short)]
    config: PathBuf,

    /// Output directory for records and sidecar files
    #[arg(long, short, default_value = "runs")]
    out: PathBuf,

    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,

    /// Override the command's primary tolerance (sync for simulate,
    /// isometry defect for isometrize and sweep)
    #[arg(long)]
    tol: Option<f64>,

    /// Suppress progress output
    #[arg(long, short)]
    quiet: bool,
}

impl RunCli {
    fn into_args(self) -> RunArgs {
        RunArgs {
            config: self.config,
            out: self.out,
            seed: self.seed,
            tol: self.tol,
            quiet: self.quiet,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Drive the configured reservoir, estimate the synchronization map,
    /// and certify injectivity, immersion, and the dimension gate
    Simulate(RunCli),

    /// Solve the linear fixed-point equation and conjugate the system so
    /// the synchronization map is an exact isometry
    Isometrize(RunCli),

    /// Repeat the conjugation pipeline over a grid of reservoir sizes and
    /// seeds, tallying rank, defect, and drift outcomes
    Sweep(RunCli),

    /// Re-check a stored run record: checksum first, then the recorded
    /// matrices are pushed back through the defining equations
    Verify {
        /// Path to a result.json produced by one of the run commands
        file: PathBuf,

        /// Suppress the confirmation line
        #[arg(long, short)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(run) => commands::cmd_simulate(&run.into_args()).map(|_| ()),
        Command::Isometrize(run) => commands::cmd_isometrize(&run.into_args()).map(|_| ()),
        Command::Sweep(run) => commands::cmd_sweep(&run.into_args()).map(|_| ()),
        Command::Verify { file, quiet } => commands::cmd_verify(&file, quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
