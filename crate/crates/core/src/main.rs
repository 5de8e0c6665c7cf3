use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edgekt::harness::{run_experiment, summarize_dir, write_outputs, ExperimentConfig};
use edgekt::Error;

#[derive(Parser)]
#[command(name = "edgekt", version, about = "Lockstep simulator for knowledge transfer between edge models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv, ledger.csv and summary.txt.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// canoe, isolated or federated
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Percentage of parameters transferred per request.
        #[arg(long)]
        z: Option<f64>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        fl_every: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Recompute the summary of a finished run.
    Summarize {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Workload(_) | Error::InvalidArgument(_) | Error::Shape(_) => 2,
        Error::NumericalFailure(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            mode,
            seed,
            z,
            nodes,
            fl_every,
            workers,
            out,
        } => (|| {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::Config(vec![format!("{}: {e}", config.display())]))?;
            let mut overrides: Vec<(&str, String)> = Vec::new();
            let pairs = [
                ("mode", mode),
                ("seed", seed.map(|v| v.to_string())),
                ("z", z.map(|v| v.to_string())),
                ("nodes", nodes.map(|v| v.to_string())),
                ("fl_every", fl_every.map(|v| v.to_string())),
                ("workers", workers.map(|v| v.to_string())),
            ];
            for (k, v) in pairs {
                if let Some(v) = v {
                    overrides.push((k, v));
                }
            }
            let cfg = ExperimentConfig::parse_with(&text, &overrides)?;
            let result = run_experiment(&cfg)?;
            write_outputs(&result, &out)
        })(),
        Command::Summarize { dir } => summarize_dir(&dir),
    };
    match result {
        Ok(summary) => {
            print!("{}", summary.to_text());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
