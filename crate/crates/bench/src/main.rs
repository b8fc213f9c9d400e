use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pathloss_bench::config::{resolve, Overrides, RunConfig, DEFAULT_OUT_DIR, OUT_DIR_ENV};
use pathloss_bench::run::{self, EXIT_CONFIG, EXIT_OK};

/// Nested cross-validated benchmark of path-loss regressors.
///
/// Exit status: 0 success, 2 invalid configuration or arguments, 3 data
/// problems (unreadable file, bad rows, too few rows for the folds),
/// 4 runtime failure (every model failed, output not writable).
#[derive(Parser)]
#[command(version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmark and write report, table, charts and log.
    Run(RunArgs),
    /// Resolve and check a configuration, then print it with defaults filled in.
    Validate(RunArgs),
    /// Re-render the table and charts from a saved report.json.
    Report {
        /// Path to a report.json written by `run`.
        report: PathBuf,
        /// Output directory (default: the report's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV path, or `synthetic`.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, long_help = format!("Output directory. Defaults to ${OUT_DIR_ENV} or `{DEFAULT_OUT_DIR}`."))]
    out: Option<PathBuf>,
    /// Comma-separated model list, e.g. `SVR,XGBR`.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    outer_k: Option<usize>,
    #[arg(long)]
    inner_k: Option<usize>,
    /// Also run conventional (non-nested) CV and write a labeled comparison table.
    #[arg(long)]
    leaky_baseline: bool,
}

fn load_config(args: &RunArgs) -> Result<RunConfig, String> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?,
        None => String::new(),
    };
    let overrides = Overrides {
        data: args.data.clone(),
        seed: args.seed,
        threads: args.threads,
        out_dir: args.out.clone(),
        models: args.models.clone(),
        outer_k: args.outer_k,
        inner_k: args.inner_k,
        leaky_baseline: args.leaky_baseline,
    };
    resolve(&text, &overrides).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate(args) => match load_config(&args) {
            Ok(cfg) => {
                print!("{}", cfg.to_toml());
                EXIT_OK
            }
            Err(e) => {
                eprintln!("invalid configuration:\n{e}");
                EXIT_CONFIG
            }
        },
        Command::Run(args) => match load_config(&args) {
            Err(e) => {
                eprintln!("invalid configuration:\n{e}");
                EXIT_CONFIG
            }
            Ok(cfg) => match run::run(&cfg) {
                Ok((artifacts, written)) => {
                    for m in &artifacts.report.models {
                        if let Some(e) = &m.error {
                            eprintln!("warning: {} failed: {e}", m.label);
                        }
                    }
                    if let Some((_, table)) = artifacts.files.iter().find(|(n, _)| n == "table.txt") {
                        print!("{table}");
                    }
                    for p in written {
                        eprintln!("wrote {}", p.display());
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            },
        },
        Command::Report { report, out } => {
            let out = out.unwrap_or_else(|| report.parent().map(PathBuf::from).unwrap_or_default());
            match run::rerender(&report, &out) {
                Ok(written) => {
                    for p in written {
                        eprintln!("wrote {}", p.display());
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
    };
    ExitCode::from(code as u8)
}
