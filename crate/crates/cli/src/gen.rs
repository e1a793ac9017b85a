//! `gen` subcommands: write synthetic datasets (and their audit columns)
//! to CSV so the other commands have reproducible inputs to work from.

use std::path::PathBuf;

use adversplit_core::datagen::{
    gen_blobs, gen_spurious, inject_label_noise, load_dataset_full, save_dataset, GroundTruth,
    SpuriousSpec,
};
use adversplit_core::Result;
use clap::{Args, Subcommand};

use crate::manifest::ManifestBuilder;
use crate::resolve_out;

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Two-class data where a nearly noiseless shortcut block tracks the
    /// label on a rho fraction of examples
    Spurious(SpuriousArgs),
    /// Gaussian class clusters with one mean coordinate per class
    Blobs(BlobsArgs),
    /// Copy a dataset, rewriting a random eta fraction of labels to a
    /// wrong class and recording which rows were polluted
    Noise(NoiseArgs),
}

#[derive(Debug, Args)]
pub struct SpuriousArgs {
    /// Number of examples
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Probability that the shortcut attribute agrees with the label
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    /// Dimensions carrying the true signal
    #[arg(long, default_value_t = 5)]
    pub d_core: usize,
    /// Dimensions carrying the shortcut attribute
    #[arg(long, default_value_t = 5)]
    pub d_spurious: usize,
    /// Pure-noise dimensions
    #[arg(long, default_value_t = 5)]
    pub d_noise: usize,
    /// Noise level of the true-signal block (the shortcut block stays
    /// nearly noiseless)
    #[arg(long, default_value_t = 2.0)]
    pub core_noise_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (falls back to ADVERSPLIT_OUT)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BlobsArgs {
    /// Number of examples
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    /// Number of classes
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Feature dimension
    #[arg(long, default_value_t = 20)]
    pub dim: usize,
    /// Distance of each class mean from the origin
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (falls back to ADVERSPLIT_OUT)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Input dataset CSV
    #[arg(long)]
    pub data: PathBuf,
    /// Fraction of labels to rewrite
    #[arg(long)]
    pub eta: f64,
    /// Number of classes (inferred from the data when omitted)
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (falls back to ADVERSPLIT_OUT)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(command: GenCommand) -> Result<()> {
    match command {
        GenCommand::Spurious(args) => run_spurious(args),
        GenCommand::Blobs(args) => run_blobs(args),
        GenCommand::Noise(args) => run_noise(args),
    }
}

fn run_spurious(args: SpuriousArgs) -> Result<()> {
    let out = resolve_out(args.out)?;
    std::fs::create_dir_all(&out)?;
    let spec = SpuriousSpec {
        n: args.n,
        d_core: args.d_core,
        d_spurious: args.d_spurious,
        d_noise: args.d_noise,
        rho: args.rho,
        core_noise_std: args.core_noise_std,
        seed: args.seed,
    };
    let (dataset, truth) = gen_spurious(&spec)?;
    save_dataset(&dataset, Some(&truth), &out.join("dataset.csv"))?;
    log::info!(
        "wrote {} examples ({} features) to {}",
        dataset.len(),
        dataset.feature_dim(),
        out.join("dataset.csv").display()
    );
    ManifestBuilder::new("gen spurious")
        .seed(args.seed)
        .config(&spec)?
        .output("dataset.csv")
        .write(&out)
}

fn run_blobs(args: BlobsArgs) -> Result<()> {
    let out = resolve_out(args.out)?;
    std::fs::create_dir_all(&out)?;
    let dataset = gen_blobs(args.n, args.classes, args.dim, args.separation, args.seed)?;
    save_dataset(&dataset, None, &out.join("dataset.csv"))?;
    log::info!(
        "wrote {} examples in {} classes to {}",
        dataset.len(),
        args.classes,
        out.join("dataset.csv").display()
    );
    ManifestBuilder::new("gen blobs")
        .seed(args.seed)
        .config(&serde_json::json!({
            "n": args.n,
            "classes": args.classes,
            "dim": args.dim,
            "separation": args.separation,
            "seed": args.seed,
        }))?
        .output("dataset.csv")
        .write(&out)
}

fn run_noise(args: NoiseArgs) -> Result<()> {
    let out = resolve_out(args.out)?;
    std::fs::create_dir_all(&out)?;
    let (dataset, truth) = load_dataset_full(&args.data, args.classes)?;
    let classes = args.classes.unwrap_or_else(|| dataset.num_classes());
    let (noisy, polluted) = inject_label_noise(&dataset, args.eta, classes, args.seed)?;
    let n_polluted = polluted.iter().filter(|&&p| p).count();
    // Keep any shortcut audit column from the input; the pollution flags
    // describe this run's rewrites.
    let merged = GroundTruth {
        spurious: truth.spurious,
        polluted: Some(polluted),
    };
    save_dataset(&noisy, Some(&merged), &out.join("dataset.csv"))?;
    log::info!(
        "rewrote {n_polluted} of {} labels to {}",
        noisy.len(),
        out.join("dataset.csv").display()
    );
    ManifestBuilder::new("gen noise")
        .seed(args.seed)
        .config(&serde_json::json!({
            "eta": args.eta,
            "classes": classes,
            "seed": args.seed,
        }))?
        .input(&args.data)?
        .output("dataset.csv")
        .write(&out)
}
