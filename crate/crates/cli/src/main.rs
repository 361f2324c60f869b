use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use glab_cli::{run_file, CliError, RunOptions};

#[derive(Parser)]
#[command(
    name = "glab",
    version,
    about = "Exact checks and CLT experiments for sub-linear expectations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more experiment configs.
    Run {
        /// Config documents (TOML).
        configs: Vec<PathBuf>,
        /// Additional config document.
        #[arg(long = "config", value_name = "PATH")]
        config: Vec<PathBuf>,
        /// Output directory, overriding each config's `output`.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Seed overriding each config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
        /// Also write PDE snapshots (x[,y],value,time).
        #[arg(long)]
        dump_fields: bool,
    },
}

fn main() -> ExitCode {
    let Command::Run {
        mut configs,
        config,
        out,
        seed,
        jobs,
        dump_fields,
    } = Cli::parse().command;
    configs.extend(config);
    if configs.is_empty() {
        eprintln!("error: no config given");
        return ExitCode::from(2);
    }
    let opts = RunOptions {
        out,
        seed,
        jobs,
        dump_fields,
    };
    let mut errors: Vec<CliError> = Vec::new();
    let mut failed = false;
    for path in &configs {
        match run_file(path, &opts) {
            Ok(outcome) => {
                println!("{}", outcome.verdict_line());
                for v in outcome.report.verdicts.iter().filter(|v| v.hard && !v.pass) {
                    eprintln!("  {v}");
                }
                failed |= !outcome.passed();
            }
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                errors.push(e);
            }
        }
    }
    let code = if errors.iter().any(|e| e.exit_code() == 2) {
        2
    } else if !errors.is_empty() {
        3
    } else {
        u8::from(failed)
    };
    ExitCode::from(code)
}
