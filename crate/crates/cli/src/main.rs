//! `adversplit`: search for train/test splits that defeat generalization,
//! and use them — as group structure for robust training, or as a label
//! noise detector. Machine-readable outputs go to files; logs go to
//! standard error. Every command is a pure function of its input files,
//! flags, and seed: reruns reproduce all outputs byte for byte (the
//! manifest's timestamps excepted).

mod debias_cmd;
mod gen;
mod manifest;
mod noise_eval;
mod split_cmd;

use std::path::{Path, PathBuf};

use adversplit_core::{Error, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

#[derive(Debug, Parser)]
#[command(
    name = "adversplit",
    version,
    about = "Adversarial train/test split search, group-robust training, and noise detection",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic datasets
    #[command(subcommand)]
    Gen(gen::GenCommand),
    /// Search for a train/test split with a large generalization gap
    Split(split_cmd::SplitArgs),
    /// Train a group-robust classifier against a plain baseline, with
    /// groups defined by a searched split
    Debias(debias_cmd::DebiasArgs),
    /// Score a split as a label-noise detector against audit columns
    NoiseEval(noise_eval::NoiseEvalArgs),
}

/// Resolves the output directory: the --out flag, else ADVERSPLIT_OUT.
fn resolve_out(out: Option<PathBuf>) -> Result<PathBuf> {
    out.or_else(|| std::env::var_os("ADVERSPLIT_OUT").map(PathBuf::from))
        .ok_or_else(|| {
            Error::InvalidConfig(
                "no output directory: pass --out or set ADVERSPLIT_OUT".into(),
            )
        })
}

/// Parses a JSON configuration file; absent path means all defaults.
/// Any parse problem is a configuration error, reported before training.
fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(path) => {
            let body = std::fs::read_to_string(path)?;
            serde_json::from_str(&body).map_err(|e| {
                Error::InvalidConfig(format!("config file {}: {e}", path.display()))
            })
        }
    }
}

/// Maps an error to the documented process exit code: 2 for configuration
/// and usage problems, 4 for numeric breakdowns, 5 for degenerate splits,
/// 3 for every data or contract problem.
fn exit_code(err: &Error) -> i32 {
    match err.category() {
        "invalid-config" => 2,
        "numeric" => 4,
        "degenerate-split" => 5,
        _ => 3,
    }
}

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter_or("ADVERSPLIT_LOG", "info")
            .write_style("ADVERSPLIT_LOG_STYLE"),
    )
    .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(command) => gen::run(command),
        Command::Split(args) => split_cmd::run(args),
        Command::Debias(args) => debias_cmd::run(args),
        Command::NoiseEval(args) => noise_eval::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
