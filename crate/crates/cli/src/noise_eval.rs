//! `noise-eval` subcommand: score a split as a label-noise detector.
//! Flagged = landed on the test side; the dataset's polluted audit column
//! is the truth. The report includes the best precision/recall any split
//! of the same test-side size could have reached.

use std::path::PathBuf;

use adversplit_core::datagen::load_dataset_full;
use adversplit_core::engine::{align_split, load_split_csv};
use adversplit_core::metrics::noise_report;
use adversplit_core::{Error, Result};
use clap::Args;

use crate::manifest::ManifestBuilder;
use crate::resolve_out;

#[derive(Debug, Args)]
pub struct NoiseEvalArgs {
    /// Input dataset CSV; must carry the polluted audit column
    #[arg(long)]
    pub data: PathBuf,
    /// Split CSV assigning every example of --data to a side
    #[arg(long)]
    pub split: PathBuf,
    /// Output directory (falls back to ADVERSPLIT_OUT)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: NoiseEvalArgs) -> Result<()> {
    let out = resolve_out(args.out)?;
    let (dataset, truth) = load_dataset_full(&args.data, None)?;
    let polluted = truth.polluted.ok_or_else(|| {
        Error::ContractViolation(format!(
            "dataset {} has no polluted audit column; generate it with `gen noise` \
             or add the column to the CSV",
            args.data.display()
        ))
    })?;
    let rows = load_split_csv(&args.split)?;
    let state = align_split(&dataset, &rows)?;
    let report = noise_report(&state.assignment, &polluted)?;
    log::info!(
        "precision {:.4} (oracle {:.4}), recall {:.4} (oracle {:.4})",
        report.precision,
        report.oracle_precision,
        report.recall,
        report.oracle_recall
    );

    std::fs::create_dir_all(&out)?;
    let mut body = serde_json::to_string_pretty(&report)?;
    body.push('\n');
    std::fs::write(out.join("noise_report.json"), body)?;

    ManifestBuilder::new("noise-eval")
        .config(&serde_json::Value::Null)?
        .input(&args.data)?
        .input(&args.split)?
        .output("noise_report.json")
        .write(&out)
}
