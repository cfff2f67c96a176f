use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use epicast::cli::{self, RunOptions, EXIT_DATA, EXIT_RUNTIME};

#[derive(Parser)]
#[command(name = "epicast", version, about = "Probabilistic incidence forecasting and evaluation")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check incidence or vintage CSV files against their schema.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Run cross-validation, selection, testing, ensembling and nowcasting.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Score forecast JSON files against observed incidence.
    Score {
        #[arg(long)]
        truth: PathBuf,
        /// Comma-separated metric names, e.g. `crps,coverage:0.05`.
        #[arg(long, value_delimiter = ',', required = true)]
        metrics: Vec<String>,
        #[arg(long, default_value_t = 1)]
        cycle_length: usize,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        forecasts: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match Args::parse().command {
        Command::Validate { paths } => {
            let problems = cli::cmd_validate(&paths);
            println!("{}", serde_json::to_string_pretty(&problems).expect("diagnostics serialize"));
            if problems.is_empty() {
                0
            } else {
                EXIT_DATA
            }
        }
        Command::Run { config, seed, out, jobs } => match cli::cmd_run(&config, &RunOptions { seed, out, jobs }) {
            Ok(rc) => {
                eprintln!("outputs written to {}", rc.output_dir.display());
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.code
            }
        },
        Command::Score {
            truth,
            metrics,
            cycle_length,
            out,
            forecasts,
        } => match cli::cmd_score(&forecasts, &truth, &metrics, cycle_length) {
            Ok(bytes) => {
                let written = match out {
                    Some(p) => std::fs::write(&p, &bytes).map_err(|e| format!("{}: {e}", p.display())),
                    None => {
                        use std::io::Write;
                        std::io::stdout().write_all(&bytes).map_err(|e| e.to_string())
                    }
                };
                match written {
                    Ok(()) => 0,
                    Err(e) => {
                        eprintln!("error: write_outputs failed: {e}");
                        EXIT_RUNTIME
                    }
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.code
            }
        },
    };
    ExitCode::from(code as u8)
}
