use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chemorep::ops::FluxScheme;
use chemorep::runner::{run, Overrides, RunKind};

/// Chemo-repulsion with signal production and bilinear control.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the state equations with the scenario's initial control
    Forward(Common),
    /// Minimize the tracking cost by projected gradient descent
    Optimize(Common),
    /// Check conservation, positivity, energy, duality and the gradient
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// scenario TOML file
    #[arg(long)]
    scenario: PathBuf,
    /// output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    snapshot_stride: Option<usize>,
    /// optimizer stationarity tolerance
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, value_enum)]
    scheme: Option<FluxScheme>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (kind, c) = match cli.command {
        Command::Forward(c) => (RunKind::Forward, c),
        Command::Optimize(c) => (RunKind::Optimize, c),
        Command::Verify(c) => (RunKind::Verify, c),
    };
    let overrides =
        Overrides { snapshot_stride: c.snapshot_stride, tol: c.tol, max_iters: c.max_iters, scheme: c.scheme };
    match run(kind, &c.scenario, &c.out, &overrides) {
        Ok(outcome) => {
            println!("{}", outcome.manifest_path.display());
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
