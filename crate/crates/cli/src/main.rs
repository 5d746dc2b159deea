use std::path::PathBuf;
use std::process::ExitCode;

use bitkernel::lab::{self, Command};
use bitkernel::Error;
use clap::Parser;

/// Runs 1-bit vs full-precision twin experiments and writes plot-ready CSV.
#[derive(Debug, Parser)]
#[command(name = "bitkernel-lab", version)]
struct Args {
    /// train, sweep-width, similarity, kernel-probe, generate-data or compare-1d
    command: String,
    /// JSON config file
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set kappa=0.5` or `--set widths=[64,256]`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bitkernel-lab: {e}");
            ExitCode::from(match e {
                Error::Config { .. } | Error::InvalidConfig(_) => EXIT_CONFIG,
                Error::Divergence { .. } => EXIT_DIVERGENCE,
                _ => 1,
            })
        }
    }
}

fn run(args: &Args) -> bitkernel::Result<String> {
    let command: Command = args.command.parse()?;
    let source = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::config("--config", format!("{}: {e}", args.config.display())))?;
    let mut overrides = vec![("command".to_string(), serde_command(command))];
    for o in &args.overrides {
        overrides.push(lab::parse_override(o)?);
    }
    let mut cfg = lab::parse_config_with_overrides(&source, &overrides)?;
    cfg.output_dir = Some(args.out.clone());
    let outcome = lab::run(&cfg, &args.out)?;
    Ok(outcome.summary)
}

fn serde_command(c: Command) -> bitkernel::lab::JsonValue {
    bitkernel::lab::JsonValue::String(c.name().to_string())
}
