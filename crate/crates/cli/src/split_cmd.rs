//! `split` subcommand: run the adversarial split search on a dataset and
//! persist the resulting split, its per-iteration trace, and — for seed
//! sweeps — an aggregate summary of the generalization gap.

use std::path::{Path, PathBuf};

use adversplit_core::datagen::load_dataset;
use adversplit_core::engine::{save_split_csv, save_traces_jsonl};
use adversplit_core::{run_ls, Dataset, Error, IterationTrace, LsConfig, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::manifest::ManifestBuilder;
use crate::{read_config, resolve_out};

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Input dataset CSV
    #[arg(long)]
    pub data: PathBuf,
    /// JSON file overriding search-configuration defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed for a single run (overrides the config seed)
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds: one search per seed into seed_<s>/ plus an
    /// aggregate summary.json
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub seeds: Option<Vec<u64>>,
    /// Output directory (falls back to ADVERSPLIT_OUT)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Gap statistics at one outer iteration, across the seeds whose runs
/// lasted that long. `gap_std` is the sample standard deviation and is
/// absent when only one seed reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationSummary {
    pub outer_iter: usize,
    pub seeds_reporting: usize,
    pub gap_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_std: Option<f64>,
}

/// Final outcome of one seed's run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub best_gap: f64,
    pub iterations: usize,
}

/// Aggregate view over a seed sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub seeds: Vec<u64>,
    pub per_iteration: Vec<IterationSummary>,
    pub final_gap_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_gap_std: Option<f64>,
    pub per_seed: Vec<SeedOutcome>,
}

fn mean_and_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(var.sqrt()))
}

/// Builds the sweep summary from each seed's full trace.
pub fn summarize_sweep(seeds: &[u64], runs: &[Vec<IterationTrace>]) -> SweepSummary {
    let max_len = runs.iter().map(Vec::len).max().unwrap_or(0);
    let per_iteration = (0..max_len)
        .map(|k| {
            let gaps: Vec<f64> = runs
                .iter()
                .filter_map(|traces| traces.get(k).map(|t| t.gap_stats.gap))
                .collect();
            let (gap_mean, gap_std) = mean_and_std(&gaps);
            IterationSummary {
                outer_iter: k,
                seeds_reporting: gaps.len(),
                gap_mean,
                gap_std,
            }
        })
        .collect();
    let per_seed: Vec<SeedOutcome> = seeds
        .iter()
        .zip(runs)
        .map(|(&seed, traces)| SeedOutcome {
            seed,
            best_gap: traces
                .iter()
                .map(|t| t.gap_stats.gap)
                .fold(f64::NEG_INFINITY, f64::max),
            iterations: traces.len(),
        })
        .collect();
    let finals: Vec<f64> = per_seed.iter().map(|s| s.best_gap).collect();
    let (final_gap_mean, final_gap_std) = mean_and_std(&finals);
    SweepSummary {
        seeds: seeds.to_vec(),
        per_iteration,
        final_gap_mean,
        final_gap_std,
        per_seed,
    }
}

fn run_one(dataset: &Dataset, config: &LsConfig, seed: u64, dir: &Path) -> Result<Vec<IterationTrace>> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    let (state, traces) = run_ls(dataset, &cfg)?;
    std::fs::create_dir_all(dir)?;
    save_split_csv(&dir.join("split.csv"), &dataset.ids(), &state)?;
    save_traces_jsonl(&dir.join("trace.jsonl"), &traces)?;
    let best = traces
        .iter()
        .map(|t| t.gap_stats.gap)
        .fold(f64::NEG_INFINITY, f64::max);
    log::info!(
        "seed {seed}: best gap {best:.4} over {} outer iterations (train fraction {:.3})",
        traces.len(),
        state.split_ratio()
    );
    Ok(traces)
}

pub fn run(args: SplitArgs) -> Result<()> {
    let out = resolve_out(args.out)?;
    // Configuration problems must surface before any data loading or training.
    let config: LsConfig = read_config(args.config.as_deref())?;
    config.validate()?;
    if let Some(seeds) = &args.seeds {
        for (i, s) in seeds.iter().enumerate() {
            if seeds[..i].contains(s) {
                return Err(Error::InvalidConfig(format!(
                    "--seeds lists seed {s} more than once"
                )));
            }
        }
    }
    let dataset = load_dataset(&args.data, None)?;
    std::fs::create_dir_all(&out)?;

    let mut manifest = ManifestBuilder::new("split")
        .config(&config)?
        .input(&args.data)?;
    if let Some(path) = &args.config {
        manifest = manifest.input(path)?;
    }

    match args.seeds {
        Some(seeds) => {
            let mut runs = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let dir = out.join(format!("seed_{seed}"));
                runs.push(run_one(&dataset, &config, seed, &dir)?);
                manifest = manifest
                    .output(&format!("seed_{seed}/split.csv"))
                    .output(&format!("seed_{seed}/trace.jsonl"));
            }
            let summary = summarize_sweep(&seeds, &runs);
            let mut body = serde_json::to_string_pretty(&summary)?;
            body.push('\n');
            std::fs::write(out.join("summary.json"), body)?;
            manifest
                .seeds(&seeds)
                .output("summary.json")
                .write(&out)
        }
        None => {
            let seed = args.seed.unwrap_or(config.seed);
            run_one(&dataset, &config, seed, &out)?;
            manifest
                .seed(seed)
                .output("split.csv")
                .output("trace.jsonl")
                .write(&out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_with_gap(outer_iter: usize, gap: f64) -> IterationTrace {
        IterationTrace {
            outer_iter,
            gap_stats: adversplit_core::engine::GapStats {
                train_accuracy: gap,
                test_accuracy: 0.0,
                gap,
                test_correct: vec![],
            },
            omega1: 0.0,
            omega2: 0.0,
            gap_loss: 0.0,
            total_loss: 0.0,
            split_ratio: 0.75,
            label_marginals: adversplit_core::engine::LabelMarginals {
                p_y_given_z1: vec![0.5, 0.5],
                p_y_given_z0: vec![0.5, 0.5],
                p_y: vec![0.5, 0.5],
            },
        }
    }

    #[test]
    fn sweep_summary_aggregates_ragged_runs() {
        // Seed 1 ran two iterations (gaps 0.1, 0.3); seed 2 ran one (gap 0.2).
        let runs = vec![
            vec![trace_with_gap(0, 0.1), trace_with_gap(1, 0.3)],
            vec![trace_with_gap(0, 0.2)],
        ];
        let summary = summarize_sweep(&[1, 2], &runs);

        assert_eq!(summary.per_iteration.len(), 2);
        let first = &summary.per_iteration[0];
        assert_eq!((first.outer_iter, first.seeds_reporting), (0, 2));
        assert!((first.gap_mean - 0.15).abs() < 1e-15);
        // Sample std of {0.1, 0.2} = 0.05 * sqrt(2).
        assert!((first.gap_std.expect("two seeds report") - 0.07071067811865475).abs() < 1e-12);

        let second = &summary.per_iteration[1];
        assert_eq!((second.outer_iter, second.seeds_reporting), (1, 1));
        assert!((second.gap_mean - 0.3).abs() < 1e-15);
        assert!(second.gap_std.is_none(), "single seed has no sample std");

        // Final gaps are the per-seed maxima: {0.3, 0.2}.
        assert!((summary.final_gap_mean - 0.25).abs() < 1e-15);
        assert_eq!(summary.per_seed[0].iterations, 2);
        assert!((summary.per_seed[0].best_gap - 0.3).abs() < 1e-15);
        assert!((summary.per_seed[1].best_gap - 0.2).abs() < 1e-15);
    }
}
