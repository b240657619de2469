//! `volt` — simulate, fit, forecast and evaluate stochastic-volatility
//! time-series models from the command line.
//!
//! Configuration comes from an INI-style file (sections `[data]`, `[model]`,
//! `[forecast]`, `[eval]`, `[multitask]`, `[simulate]`); every key can be
//! overridden on the command line as `--section.key=value`. `--show-config`
//! prints the fully resolved configuration. `VOLT_SEED` provides a default
//! seed. Exit codes: 0 success, 2 validation error, 3 numerical failure,
//! 4 i/o error.

mod artifact;
mod commands;
mod config;
mod ioutil;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use volt::error::VoltError;

use config::{KvConfig, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "volt", version, about = "Stochastic-volatility GP forecasting")]
struct Cli {
    /// INI-style configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key (repeatable); `--section.key=value`
    /// also works directly.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,

    /// Print the resolved configuration before running.
    #[arg(long, global = true)]
    show_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic data from an SDE simulator.
    Simulate {
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Include the latent volatility column(s).
        #[arg(long)]
        with_vol: bool,
    },
    /// Train a model and write the artifact.
    Fit {
        /// Input CSV (defaults to data.path from the config).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output model artifact (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample future paths from a fitted model.
    Forecast {
        /// Model artifact written by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// Output directory (paths.csv, fan.csv, meta.json).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score forecasts against realized values.
    Evaluate {
        /// Forecast directories (or parents of them); repeatable.
        #[arg(long, required = true)]
        forecasts: Vec<PathBuf>,
        /// CSV of realized values with matching columns.
        #[arg(long)]
        truth: PathBuf,
        /// Row offset into the truth file where forecast step 1 aligns.
        #[arg(long)]
        truth_offset: Option<usize>,
        /// Output directory (report.csv, summary.json).
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &VoltError) -> i32 {
    match err {
        VoltError::Io(_) | VoltError::Csv(_) => 4,
        VoltError::NotPositiveDefinite { .. } | VoltError::NonFinite(_) => 3,
        _ => 2,
    }
}

/// Pull `--section.key=value` tokens out of argv so clap never sees them.
fn split_overrides() -> (Vec<String>, Vec<String>) {
    let mut args = Vec::new();
    let mut overrides = Vec::new();
    for (i, arg) in std::env::args().enumerate() {
        if i > 0 {
            if let Some(body) = arg.strip_prefix("--") {
                if body.contains('.') && body.contains('=') {
                    overrides.push(body.to_string());
                    continue;
                }
            }
        }
        args.push(arg);
    }
    (args, overrides)
}

fn run(cli: Cli, overrides: &[String]) -> Result<(), VoltError> {
    let mut kv = match &cli.config {
        Some(path) => KvConfig::parse_file(path)?,
        None => KvConfig::default(),
    };
    for spec in overrides {
        kv.apply_override(spec)?;
    }
    for spec in &cli.set {
        kv.apply_override(spec)?;
    }
    let cfg = RunConfig::resolve(&kv)?;
    if cli.show_config {
        print!("{}", cfg.render());
    }
    match cli.command {
        None => {
            if !cli.show_config {
                return Err(VoltError::Invalid(
                    "no command given (simulate | fit | forecast | evaluate)".into(),
                ));
            }
            Ok(())
        }
        Some(Command::Simulate { out, with_vol }) => commands::cmd_simulate(&cfg, &out, with_vol),
        Some(Command::Fit { data, out }) => commands::cmd_fit(&cfg, data.as_deref(), &out),
        Some(Command::Forecast { model, out }) => commands::cmd_forecast(&cfg, &model, &out),
        Some(Command::Evaluate {
            forecasts,
            truth,
            truth_offset,
            out,
        }) => commands::cmd_evaluate(&cfg, &forecasts, &truth, truth_offset, &out),
    }
}

fn main() {
    let (args, overrides) = split_overrides();
    let cli = Cli::parse_from(args);
    if let Err(err) = run(cli, &overrides) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
