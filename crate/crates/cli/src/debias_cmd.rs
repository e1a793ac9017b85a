//! `debias` subcommand: treat the searched split as group structure —
//! every example belongs to group (label, side) — then train one plain
//! average-loss classifier and one group-robust classifier the same way,
//! and report per-group accuracy for both.

use std::path::{Path, PathBuf};

use adversplit_core::datagen::{load_dataset, load_dataset_full};
use adversplit_core::debias::{
    assign_groups, erm_train, group_dro_train, DroConfig, GroupKey,
};
use adversplit_core::engine::{align_split, load_split_csv, predictions};
use adversplit_core::metrics::{worst_group_accuracy, GroupStats};
use adversplit_core::nn::MlpParams;
use adversplit_core::{Dataset, Error, Result};
use clap::Args;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::manifest::ManifestBuilder;
use crate::{read_config, resolve_out};

/// Weight decays tried by `--wd-grid`, strongest first; the first value
/// reaching the best validation metric wins.
const WD_GRID: [f64; 5] = [1.0, 0.1, 0.01, 0.001, 0.0];

#[derive(Debug, Args)]
pub struct DebiasArgs {
    /// Input dataset CSV (the data the classifiers train on)
    #[arg(long)]
    pub data: PathBuf,
    /// Split CSV assigning every example of --data to a side
    #[arg(long)]
    pub split: PathBuf,
    /// JSON file overriding trainer defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fraction of --data held out for model selection when no --val-data
    /// is given
    #[arg(long, default_value_t = 0.2, conflicts_with_all = ["val_data", "val_split"])]
    pub val_fraction: f64,
    /// Separate validation dataset (requires --val-split)
    #[arg(long, requires = "val_split")]
    pub val_data: Option<PathBuf>,
    /// Split CSV assigning every example of --val-data to a side
    #[arg(long, requires = "val_data")]
    pub val_split: Option<PathBuf>,
    /// Separate evaluation dataset with a shortcut audit column; metrics
    /// are then reported over ground-truth (label, attribute) groups
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Derive sides from the stored probabilities (p >= 0.5) instead of
    /// the sampled z column
    #[arg(long)]
    pub thresholded_z: bool,
    /// Try weight decays {1, 0.1, 0.01, 0.001, 0} and keep the best by
    /// validation metric, independently for each trainer
    #[arg(long)]
    pub wd_grid: bool,
    /// Output directory (falls back to ADVERSPLIT_OUT)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything `metrics.json` reports for one trainer.
#[derive(Debug, Serialize)]
struct TrainerReport {
    #[serde(flatten)]
    stats: GroupStats,
    weight_decay: f64,
    validation_metric: f64,
}

#[derive(Debug, Serialize)]
struct MetricsReport {
    erm: TrainerReport,
    group_dro: TrainerReport,
    /// "ground-truth-groups" when --eval-data was given, else
    /// "validation-partition".
    evaluation: &'static str,
}

/// Loads a dataset together with the (label, side) group of every example,
/// aligned by id from a split file.
fn load_grouped(
    data: &Path,
    split: &Path,
    thresholded: bool,
) -> Result<(Dataset, Vec<GroupKey>)> {
    let dataset = load_dataset(data, None)?;
    let rows = load_split_csv(split)?;
    let state = align_split(&dataset, &rows)?;
    let state = if thresholded { state.thresholded() } else { state };
    let groups = assign_groups(&dataset, &state.assignment)?;
    Ok((dataset, groups))
}

/// Splits `n` indices into (train, validation) with a seeded shuffle.
fn partition_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    // Decorrelate from the training streams, which also derive from the
    // config seed.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5641_4c49_4441_5445);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let n_val = ((n as f64 * val_fraction).floor() as usize).clamp(1, n - 1);
    let mut val: Vec<usize> = indices[..n_val].to_vec();
    let mut train: Vec<usize> = indices[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn select_subset(
    dataset: &Dataset,
    groups: &[GroupKey],
    indices: &[usize],
) -> Result<(Dataset, Vec<GroupKey>)> {
    let subset = dataset.subset(indices)?;
    let subset_groups = indices.iter().map(|&i| groups[i]).collect();
    Ok((subset, subset_groups))
}

/// Ground-truth evaluation group: true label plus shortcut attribute.
struct EvalKey {
    label: usize,
    attr: u8,
}

impl std::fmt::Display for EvalKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "y={},a={}", self.label, self.attr)
    }
}

/// Trains one objective across the weight-decay candidates and keeps the
/// parameters with the strictly best validation metric (first candidate
/// wins ties).
fn train_best(
    candidates: &[f64],
    mut train_one: impl FnMut(f64) -> Result<(MlpParams, f64)>,
) -> Result<(MlpParams, f64, f64)> {
    let mut best: Option<(MlpParams, f64, f64)> = None;
    for &wd in candidates {
        let (params, metric) = train_one(wd)?;
        log::info!("  weight decay {wd}: validation metric {metric:.4}");
        let improved = best.as_ref().is_none_or(|(_, m, _)| metric > *m);
        if improved {
            best = Some((params, metric, wd));
        }
    }
    best.ok_or_else(|| Error::InvalidConfig("no weight-decay candidates to try".into()))
}

pub fn run(args: DebiasArgs) -> Result<()> {
    let out = resolve_out(args.out)?;
    let config: DroConfig = read_config(args.config.as_deref())?;
    config.validate()?;
    if !(args.val_fraction > 0.0 && args.val_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "--val-fraction must lie strictly between 0 and 1, got {}",
            args.val_fraction
        )));
    }

    let (dataset, groups) = load_grouped(&args.data, &args.split, args.thresholded_z)?;
    let (train, train_groups, val, val_groups) = match (&args.val_data, &args.val_split) {
        (Some(val_data), Some(val_split)) => {
            let (val, val_groups) = load_grouped(val_data, val_split, args.thresholded_z)?;
            (dataset, groups, val, val_groups)
        }
        _ => {
            let (train_idx, val_idx) =
                partition_indices(dataset.len(), args.val_fraction, config.seed);
            let (train, train_groups) = select_subset(&dataset, &groups, &train_idx)?;
            let (val, val_groups) = select_subset(&dataset, &groups, &val_idx)?;
            (train, train_groups, val, val_groups)
        }
    };
    log::info!(
        "training on {} examples, validating on {}",
        train.len(),
        val.len()
    );

    let candidates: &[f64] = if args.wd_grid {
        &WD_GRID
    } else {
        &[config.weight_decay]
    };

    log::info!("training average-loss baseline");
    let (erm_params, erm_metric, erm_wd) = train_best(candidates, |wd| {
        let cfg = DroConfig {
            weight_decay: wd,
            ..config.clone()
        };
        erm_train(&train, &val, &cfg)
    })?;
    log::info!("training group-robust classifier");
    let (dro_params, dro_metric, dro_wd) = train_best(candidates, |wd| {
        let cfg = DroConfig {
            weight_decay: wd,
            ..config.clone()
        };
        group_dro_train(&train, &train_groups, &val, &val_groups, &cfg)
    })?;

    // Final metrics: ground-truth groups on a separate evaluation set when
    // provided, otherwise (label, side) groups on the validation partition.
    let (evaluation, erm_stats, dro_stats) = match &args.eval_data {
        Some(eval_path) => {
            let (eval, truth) = load_dataset_full(eval_path, Some(train.num_classes()))?;
            let attrs = truth.spurious.ok_or_else(|| {
                Error::ContractViolation(format!(
                    "evaluation dataset {} has no spurious audit column, so ground-truth \
                     groups cannot be formed",
                    eval_path.display()
                ))
            })?;
            let keys: Vec<EvalKey> = eval
                .examples()
                .iter()
                .zip(&attrs)
                .map(|(ex, &attr)| EvalKey {
                    label: ex.label,
                    attr,
                })
                .collect();
            let labels = eval.labels();
            let erm_preds = predictions(&erm_params, &eval)?;
            let dro_preds = predictions(&dro_params, &eval)?;
            (
                "ground-truth-groups",
                worst_group_accuracy(&erm_preds, &labels, &keys, None)?,
                worst_group_accuracy(&dro_preds, &labels, &keys, None)?,
            )
        }
        None => {
            let labels = val.labels();
            let erm_preds = predictions(&erm_params, &val)?;
            let dro_preds = predictions(&dro_params, &val)?;
            (
                "validation-partition",
                worst_group_accuracy(&erm_preds, &labels, &val_groups, None)?,
                worst_group_accuracy(&dro_preds, &labels, &val_groups, None)?,
            )
        }
    };
    log::info!(
        "worst-group accuracy: baseline {:.4}, group-robust {:.4}",
        erm_stats.worst_group_accuracy,
        dro_stats.worst_group_accuracy
    );

    let report = MetricsReport {
        erm: TrainerReport {
            stats: erm_stats,
            weight_decay: erm_wd,
            validation_metric: erm_metric,
        },
        group_dro: TrainerReport {
            stats: dro_stats,
            weight_decay: dro_wd,
            validation_metric: dro_metric,
        },
        evaluation,
    };
    std::fs::create_dir_all(&out)?;
    let mut body = serde_json::to_string_pretty(&report)?;
    body.push('\n');
    std::fs::write(out.join("metrics.json"), body)?;

    let mut manifest = ManifestBuilder::new("debias")
        .seed(config.seed)
        .config(&serde_json::json!({
            "trainer": config,
            "val_fraction": args.val_fraction,
            "thresholded_z": args.thresholded_z,
            "wd_grid": args.wd_grid,
        }))?
        .input(&args.data)?
        .input(&args.split)?;
    for path in [&args.config, &args.val_data, &args.val_split, &args.eval_data]
        .into_iter()
        .flatten()
    {
        manifest = manifest.input(path)?;
    }
    manifest.output("metrics.json").write(&out)
}
