use std::path::PathBuf;
use std::process::ExitCode;

use avail_bound::{execute, resolve_threads, Command, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "avail-bound",
    version,
    about = "Convergence-rate bounds and simulation for alternating renewal availability"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads (default: AVAIL_BOUND_THREADS, else all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute Ψ(α, X₀) and the window (R, N) it uses.
    Bound(Common),
    /// Estimate availability curves from each initial state.
    Simulate(Common),
    /// Run the paired process and estimate E(1+ς)^α.
    Couple(Common),
    /// Availability curve from the stationary start.
    Stationary(Common),
    /// Compare simulated curves with the bound and run the marginal checks.
    Verify(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Bound(c) => (Command::Bound, c),
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Couple(c) => (Command::Couple, c),
        Cmd::Stationary(c) => (Command::Stationary, c),
        Cmd::Verify(c) => (Command::Verify, c),
    };
    let result = RunConfig::from_file(&common.config)
        .map_err(avail_bound::CliError::from)
        .and_then(|cfg| {
            let threads = resolve_threads(common.threads)?;
            execute(command, &cfg, common.out.as_deref(), threads)
        });
    match result {
        Ok(outcome) => {
            eprintln!(
                "{}: wrote {} files to {}",
                command.name(),
                outcome.manifest.files.len() + 1,
                outcome.out_dir.display()
            );
            match outcome.verdict {
                Some(v) if !v.passed() => {
                    println!("FAIL (failing t: {:?})", v.failing_t);
                    ExitCode::from(1)
                }
                Some(_) => {
                    println!("PASS");
                    ExitCode::SUCCESS
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
