use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use tlmp_sim::io::{write_rows, Format};
use tlmp_sim::sweep::{parse_sweep, run_sweep};
use tlmp_sim::{Result, SimConfig, SimError};

/// Monte-Carlo simulation of TLMP unsourced random access decoding.
#[derive(Debug, Parser)]
#[command(name = "tlmp-sim", version)]
struct Cli {
    /// Configuration file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Trials per point; overrides the file.
    #[arg(long)]
    trials: Option<usize>,
    /// Sweep one axis, e.g. `n=512,768`. Axes: n, k, m, snr_db, l.
    #[arg(long)]
    sweep: Option<String>,
    /// Output file; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Override any configuration key, e.g. `--set theta1=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => SimConfig::from_file(p)?,
        None => SimConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.trials {
        cfg.trials = t;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| SimError::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let format: Format = cli.format.parse()?;
    let sweep = cli.sweep.as_deref().map(parse_sweep).transpose()?;
    cfg.validate()?;
    if cli.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }

    let rows = run_sweep(&cfg, sweep.as_ref().map(|(a, v)| (*a, v.as_slice())))?;
    match &cli.out {
        Some(path) => {
            let io_err = |source| SimError::Io {
                path: path.clone(),
                source,
            };
            let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
            write_rows(&rows, format, &mut w)?;
            w.flush().map_err(io_err)?;
            log::info!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => write_rows(&rows, format, io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
