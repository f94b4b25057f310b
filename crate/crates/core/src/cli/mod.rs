//! Command-line runner. Each subcommand reads a JSON config (optionally
//! layered over a named preset), runs one laboratory and writes CSV.
//!
//! Precedence for run-level settings: flag, then `DISTGOF_*` environment
//! variable, then the config file, then the default. The parallelism degree
//! never changes the output bytes and is not part of the config hash.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::Value;

pub use config::{preset_config, preset_names, resolve, Command, Config, Resolved, SCHEMA_VERSION};
pub use output::Row;

use crate::error::{Error, Result};
use crate::exec::Exec;
use commands::Ctx;

#[derive(Debug, Parser)]
#[command(name = "distgof", version, about = "Distributed goodness-of-fit testing laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
    /// JSON experiment config.
    #[arg(long, global = true, env = "DISTGOF_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Main CSV path; the fit summary goes to `<stem>.fits.csv` beside it.
    #[arg(long, global = true, env = "DISTGOF_OUT", value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "DISTGOF_SEED", value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "DISTGOF_JOBS", value_name = "N")]
    pub jobs: Option<usize>,
    /// Named base config; the config file is merged over it.
    #[arg(long, global = true, env = "DISTGOF_PRESET", value_name = "NAME")]
    pub preset: Option<String>,
    /// Fill the wall_time column (output is then no longer reproducible).
    #[arg(long, global = true, env = "DISTGOF_WALL_TIME")]
    pub wall_time: bool,
    /// Print the presets of the subcommand and exit.
    #[arg(long, global = true)]
    pub list_presets: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Sub {
    /// Calibrate thresholds and check the fresh-sample type I error.
    Calibrate,
    /// Panel risk of one protocol at given separations.
    Risk,
    /// Separation-rate sweep with exponent, elbow or phase fit.
    Sweep,
    /// Exact finite-instance checks.
    Equiv,
    /// Sparse-regime demonstration comparing raw forwarding with b-bit Gaussian protocols.
    Noneq,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Calibrate => Command::Calibrate,
            Sub::Risk => Command::Risk,
            Sub::Sweep => Command::Sweep,
            Sub::Equiv => Command::Equiv,
            Sub::Noneq => Command::Noneq,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub preset: Option<String>,
    pub wall_time: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub command: Command,
    pub seed: u64,
    pub jobs: usize,
    pub config_hash: String,
    pub main_csv: String,
    pub summary_csv: Option<String>,
    pub report: Value,
    pub human: Vec<String>,
}

/// Resolve and run one command. `raw` is the parsed config file, if any.
pub fn run(command: Command, raw: Option<Value>, opts: &RunOptions) -> Result<RunOutput> {
    let resolved = resolve(command, raw, opts.preset.as_deref(), opts.seed)?;
    let jobs = opts.jobs.or(resolved.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(Error::Config("jobs must be at least 1".into()));
    }
    let ctx = Ctx {
        seed: resolved.seed,
        exec: Exec::new(jobs),
        start: opts.wall_time.then(Instant::now),
    };
    let out = match &resolved.config {
        Config::Calibrate(c) => commands::calibrate_cmd(c, &ctx)?,
        Config::Risk(c) => commands::risk_cmd(c, &ctx)?,
        Config::Sweep(c) => commands::sweep_cmd(c, &ctx)?,
        Config::Equiv(c) => commands::equiv_cmd(c, &ctx)?,
        Config::Noneq(c) => commands::noneq_cmd(c, &ctx)?,
    };
    let main_csv = output::render(&resolved, "results", &out.rows)?;
    let summary_csv = match &out.summary {
        Some(rows) => Some(output::render(&resolved, "fits", rows)?),
        None => None,
    };
    Ok(RunOutput {
        command,
        seed: resolved.seed,
        jobs,
        config_hash: resolved.hash(),
        main_csv,
        summary_csv,
        report: out.report,
        human: out.human,
    })
}

pub fn read_config(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", path.display())))
}

pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.fits.csv"))
}

fn execute(cli: Cli) -> Result<()> {
    let command: Command = cli.command.into();
    if cli.list_presets {
        for p in preset_names(command) {
            println!("{p}");
        }
        return Ok(());
    }
    let raw = cli.config.as_deref().map(read_config).transpose()?;
    let opts = RunOptions {
        seed: cli.seed,
        jobs: cli.jobs,
        preset: cli.preset.clone(),
        wall_time: cli.wall_time,
    };
    let res = run(command, raw, &opts)?;
    match &cli.out {
        Some(path) => {
            std::fs::write(path, &res.main_csv)?;
            if let Some(s) = &res.summary_csv {
                std::fs::write(summary_path(path), s)?;
            }
            for l in &res.human {
                println!("{l}");
            }
        }
        None => {
            print!("{}", res.main_csv);
            if let Some(s) = &res.summary_csv {
                println!();
                print!("{s}");
            }
            for l in &res.human {
                eprintln!("{l}");
            }
        }
    }
    Ok(())
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
