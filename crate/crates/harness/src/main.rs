use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mknn_harness::{execute, HarnessError, Mode, RunConfig};

#[derive(Parser)]
#[command(name = "mknn", version, about = "Batch k-NN over moving objects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to `dataset`.
    Generate(Common),
    /// Answer every tick and write results and metrics.
    Run(Common),
    /// Like `run`, and compare every tick against brute force.
    Verify(Common),
    /// Run the configured study and write `bench_out`.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn load(c: &Common) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(c.set.iter().map(String::as_str))?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common) = match &cli.command {
        Command::Generate(c) => (Mode::Generate, c),
        Command::Run(c) => (Mode::Run, c),
        Command::Verify(c) => (Mode::Verify, c),
        Command::Bench(c) => (Mode::Bench, c),
    };
    match load(common).and_then(|cfg| execute(mode, &cfg)) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            eprintln!("mknn: {e}");
            ExitCode::from(1)
        }
    }
}
