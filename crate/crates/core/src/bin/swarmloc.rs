use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use swarmloc::harness::{self, ScenarioConfig, SweepAxis};

#[derive(Parser)]
#[command(name = "swarmloc", version, about = "Range-and-odometry swarm localization and formation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its logs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; SWARMLOC_OUT_DIR takes precedence when set.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Monte-Carlo sweep over one axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// noise, swarm_size or outlier_prob.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Summarize a run or sweep directory; exits non-zero when it failed.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, harness::HarnessError> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = harness::resolve_out_dir(&out);
            let result = harness::run(&cfg, cfg.seed)?;
            harness::write_run(&dir, &cfg, &result)?;
            println!("wrote {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, axis, values, seeds, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let dir = harness::resolve_out_dir(&out);
            let (cells, runs) = harness::sweep(&cfg, axis, &values, seeds)?;
            harness::write_sweep(&dir, &cfg, &cells, &runs)?;
            println!("wrote {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dir } => {
            let r = harness::report(&dir)?;
            print!("{}", r.text);
            Ok(if r.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
