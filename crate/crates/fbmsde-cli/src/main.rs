use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;
use fbmsde_cli::{config_schema, run, Command, RunConfig, RunOptions};

/// Experiments for SDEs driven by weighted cylindrical fractional Brownian motion.
#[derive(Debug, Parser)]
#[command(name = "fbmsde", version)]
struct Args {
    /// simulate, validate, solve, converge, girsanov, verify-suite or schema;
    /// overrides `command` in the config.
    command: Option<String>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; takes precedence over FBMSDE_OUT and `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.command.as_deref() == Some("schema") {
        print!("{}", config_schema());
        return ExitCode::SUCCESS;
    }
    let mut cfg = match &args.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match RunConfig::from_toml(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            },
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return ExitCode::from(1);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(c) = &args.command {
        match Command::parse(c) {
            Some(c) => cfg.command = c,
            None => {
                eprintln!("error: unknown command `{c}`");
                return ExitCode::from(1);
            }
        }
    }
    if let Some(s) = args.seed {
        cfg.mc.seed = s;
    }
    let out_dir = args
        .out
        .or_else(|| std::env::var_os("FBMSDE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output));
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let opts = RunOptions {
        out_dir: out_dir.clone(),
        threads: args.threads,
        timestamp: format!("unix:{secs}"),
    };
    match run(&cfg, &opts) {
        Ok(code) => {
            let verdict = if code == 0 { "all checks passed" } else { "some checks failed" };
            eprintln!("{}: {verdict}; output in {}", cfg.command.name(), out_dir.display());
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
