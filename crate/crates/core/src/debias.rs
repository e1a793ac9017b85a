//! Group-robust classifier training over split-defined groups.
//!
//! A discovered train/test split partitions examples into groups keyed
//! by (label, split side). Standard empirical-risk training (`erm_train`)
//! minimizes the plain average loss; group-robust training
//! (`group_dro_train`) maintains one weight per group, raises weights of
//! high-loss groups by an exponentiated-gradient step each batch, and
//! minimizes the weighted group-average loss. Both trainers share one
//! skeleton and consume randomness identically, so with a single group
//! they produce bit-identical parameters.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::engine::config::splitmix64;
use crate::error::{Error, Result};
use crate::metrics::{worst_group_accuracy, GroupStats};
use crate::nn::{
    adam_step, backward, forward, forward_eval, init_params, softmax_cross_entropy, AdamState,
    DropoutSpec, MlpGrads, MlpParams, Mode,
};

/// Group identity of one example: its class label and which side of the
/// split it landed on (`z == true` means the train side).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub label: usize,
    pub z: bool,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "y={},z={}", self.label, u8::from(self.z))
    }
}

/// Pairs each example's label with its split side.
pub fn assign_groups(dataset: &Dataset, assignment: &[bool]) -> Result<Vec<GroupKey>> {
    if assignment.len() != dataset.len() {
        return Err(Error::ShapeMismatch(format!(
            "assignment covers {} examples, dataset has {}",
            assignment.len(),
            dataset.len()
        )));
    }
    Ok(dataset
        .labels()
        .iter()
        .zip(assignment)
        .map(|(&label, &z)| GroupKey { label, z })
        .collect())
}

/// Configuration shared by the plain and group-robust trainers.
/// Deserializes from JSON with missing fields taking their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroConfig {
    /// Exponentiated-gradient step size for the group weights.
    pub group_step_size: f64,
    /// Adam learning rate.
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// L2 coefficient added to the gradient as `wd * parameter`.
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for DroConfig {
    fn default() -> Self {
        DroConfig {
            group_step_size: 0.01,
            lr: 1e-3,
            batch_size: 200,
            max_epochs: 100,
            patience: 10,
            weight_decay: 0.0,
            hidden: vec![100],
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl DroConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(msg))
            }
        };
        check(
            self.group_step_size.is_finite() && self.group_step_size >= 0.0,
            format!("group_step_size must be nonnegative, got {}", self.group_step_size),
        )?;
        check(
            self.lr.is_finite() && self.lr > 0.0,
            format!("lr must be positive, got {}", self.lr),
        )?;
        check(self.batch_size >= 1, "batch_size must be at least 1".into())?;
        check(self.patience >= 1, "patience must be at least 1".into())?;
        check(
            self.weight_decay.is_finite() && self.weight_decay >= 0.0,
            format!("weight_decay must be nonnegative, got {}", self.weight_decay),
        )?;
        check(
            self.dropout.is_finite() && (0.0..1.0).contains(&self.dropout),
            format!("dropout must lie in [0,1), got {}", self.dropout),
        )?;
        check(
            self.hidden.iter().all(|&d| d >= 1),
            format!("hidden widths must be positive, got {:?}", self.hidden),
        )?;
        Ok(())
    }
}

/// One exponentiated-gradient step on the group weights:
/// `w_g <- w_g * exp(step * loss_g)`, renormalized to sum to one.
/// Groups with higher loss gain weight share.
pub fn dro_weight_update(weights: &mut [f64], group_losses: &[f64], step: f64) -> Result<()> {
    if weights.len() != group_losses.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights vs {} group losses",
            weights.len(),
            group_losses.len()
        )));
    }
    if weights.is_empty() {
        return Err(Error::ContractViolation("no groups to reweight".into()));
    }
    if !(step.is_finite() && step >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "step size must be nonnegative and finite, got {step}"
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Domain("weights must be nonnegative and finite".into()));
    }
    if group_losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric("group losses must be finite".into()));
    }
    for (w, &loss) in weights.iter_mut().zip(group_losses) {
        *w *= (step * loss).exp();
    }
    let sum: f64 = weights.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return Err(Error::Numeric(format!(
            "group weights degenerated (sum {sum}); step size is likely too large"
        )));
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    Ok(())
}

/// Per-group accuracy and mean loss of a classifier on a dataset.
pub fn evaluate_groups(
    params: &MlpParams,
    dataset: &Dataset,
    groups: &[GroupKey],
) -> Result<GroupStats> {
    if groups.len() != dataset.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} group keys for {} examples",
            groups.len(),
            dataset.len()
        )));
    }
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut losses = Vec::with_capacity(dataset.len());
    for ex in dataset.examples() {
        let logits = forward_eval(params, &ex.features)?;
        let (loss, _) = softmax_cross_entropy(&logits, ex.label)?;
        predictions.push(crate::engine::predictor::argmax(&logits));
        losses.push(loss);
    }
    worst_group_accuracy(&predictions, &dataset.labels(), groups, Some(&losses))
}

/// What the shared trainer optimizes for: plain average loss, or the
/// weighted worst-case over groups.
enum Objective<'a> {
    Average,
    GroupRobust {
        train_groups: &'a [GroupKey],
        val_groups: &'a [GroupKey],
    },
}

/// Trains a classifier by minimizing the average loss; returns the
/// parameter snapshot with the best validation average accuracy, and
/// that accuracy.
pub fn erm_train(train: &Dataset, val: &Dataset, config: &DroConfig) -> Result<(MlpParams, f64)> {
    fit_classifier(train, val, config, Objective::Average)
}

/// Trains a classifier by minimizing the group-weighted loss with
/// exponentiated-gradient weight updates; returns the parameter
/// snapshot with the best validation worst-group accuracy, and that
/// accuracy. Group weights persist across the whole run.
pub fn group_dro_train(
    train: &Dataset,
    train_groups: &[GroupKey],
    val: &Dataset,
    val_groups: &[GroupKey],
    config: &DroConfig,
) -> Result<(MlpParams, f64)> {
    if train_groups.len() != train.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} group keys for {} training examples",
            train_groups.len(),
            train.len()
        )));
    }
    if val_groups.len() != val.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} group keys for {} validation examples",
            val_groups.len(),
            val.len()
        )));
    }
    fit_classifier(
        train,
        val,
        config,
        Objective::GroupRobust {
            train_groups,
            val_groups,
        },
    )
}

/// The common training skeleton. Both objectives walk the same shuffled
/// batches and draw the same dropout masks; only the way per-example
/// gradients are combined differs, so a single-group robust run is
/// bit-identical to the plain run.
fn fit_classifier(
    train: &Dataset,
    val: &Dataset,
    config: &DroConfig,
    objective: Objective<'_>,
) -> Result<(MlpParams, f64)> {
    config.validate()?;
    if val.feature_dim() != train.feature_dim() || val.num_classes() != train.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "validation data is {}-dimensional with {} classes, training data {}-dimensional with {}",
            val.feature_dim(),
            val.num_classes(),
            train.feature_dim(),
            train.num_classes()
        )));
    }

    // Group bookkeeping (empty for the average objective).
    let (group_index, mut group_weights): (HashMap<GroupKey, usize>, Vec<f64>) = match &objective {
        Objective::Average => (HashMap::new(), Vec::new()),
        Objective::GroupRobust {
            train_groups,
            val_groups,
        } => {
            let distinct: BTreeSet<GroupKey> = train_groups.iter().copied().collect();
            for key in val_groups.iter().collect::<BTreeSet<_>>() {
                if !distinct.contains(key) {
                    log::warn!(
                        "validation group {key} never occurs in training; its weight cannot adapt"
                    );
                }
            }
            let index: HashMap<GroupKey, usize> = distinct
                .iter()
                .enumerate()
                .map(|(i, &key)| (key, i))
                .collect();
            let uniform = vec![1.0 / distinct.len() as f64; distinct.len()];
            (index, uniform)
        }
    };

    let dims: Vec<usize> = {
        let mut d = Vec::with_capacity(config.hidden.len() + 2);
        d.push(train.feature_dim());
        d.extend_from_slice(&config.hidden);
        d.push(train.num_classes());
        d
    };
    let mut params = init_params(&dims, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed));
    let dropout = DropoutSpec::new(config.dropout)?;
    let mut adam = AdamState::new(&params);

    let val_metric = |params: &MlpParams| -> Result<f64> {
        match &objective {
            Objective::Average => {
                let mut right = 0usize;
                for ex in val.examples() {
                    let logits = forward_eval(params, &ex.features)?;
                    if crate::engine::predictor::argmax(&logits) == ex.label {
                        right += 1;
                    }
                }
                Ok(right as f64 / val.len() as f64)
            }
            Objective::GroupRobust { val_groups, .. } => {
                Ok(evaluate_groups(params, val, val_groups)?.worst_group_accuracy)
            }
        }
    };

    let mut best_params = params.clone();
    let mut best_metric = val_metric(&params)?;
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for _epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let grads = match &objective {
                Objective::Average => {
                    let mut buffer = MlpGrads::zeros_like(&params);
                    for &i in batch {
                        let ex = train.example(i);
                        let (logits, cache) =
                            forward(&params, &ex.features, Mode::Train, &dropout, &mut rng)?;
                        let (_, dlogits) = softmax_cross_entropy(&logits, ex.label)?;
                        buffer.add_assign(&backward(&params, &cache, &dlogits)?)?;
                    }
                    buffer.scale(1.0 / batch.len() as f64);
                    buffer
                }
                Objective::GroupRobust { train_groups, .. } => {
                    let n_groups = group_weights.len();
                    let mut buffers: Vec<MlpGrads> =
                        (0..n_groups).map(|_| MlpGrads::zeros_like(&params)).collect();
                    let mut loss_sums = vec![0.0; n_groups];
                    let mut counts = vec![0usize; n_groups];
                    for &i in batch {
                        let ex = train.example(i);
                        let g = group_index[&train_groups[i]];
                        let (logits, cache) =
                            forward(&params, &ex.features, Mode::Train, &dropout, &mut rng)?;
                        let (loss, dlogits) = softmax_cross_entropy(&logits, ex.label)?;
                        buffers[g].add_assign(&backward(&params, &cache, &dlogits)?)?;
                        loss_sums[g] += loss;
                        counts[g] += 1;
                    }
                    let batch_losses: Vec<f64> = loss_sums
                        .iter()
                        .zip(&counts)
                        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
                        .collect();
                    // Weights move first; the parameter step then uses
                    // the freshly raised weights.
                    dro_weight_update(&mut group_weights, &batch_losses, config.group_step_size)?;
                    let mut total = MlpGrads::zeros_like(&params);
                    for (g, mut buffer) in buffers.into_iter().enumerate() {
                        if counts[g] > 0 {
                            buffer.scale(group_weights[g] / counts[g] as f64);
                            total.add_assign(&buffer)?;
                        }
                    }
                    total
                }
            };
            let mut grads = grads;
            if config.weight_decay > 0.0 {
                for (gl, pl) in grads.layers.iter_mut().zip(&params.layers) {
                    for (g, p) in gl.w.iter_mut().zip(&pl.w) {
                        *g += config.weight_decay * p;
                    }
                    for (g, p) in gl.b.iter_mut().zip(&pl.b) {
                        *g += config.weight_decay * p;
                    }
                }
            }
            adam_step(&mut params, &grads, &mut adam, config.lr)?;
        }
        let metric = val_metric(&params)?;
        if metric > best_metric {
            best_metric = metric;
            best_params = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok((best_params, best_metric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Example;

    #[test]
    fn weight_update_matches_closed_form() {
        // Two equal groups, losses [0, 1], step 1: weights become
        // [1, e] renormalized = [1/(1+e), e/(1+e)].
        let mut w = vec![0.5, 0.5];
        dro_weight_update(&mut w, &[0.0, 1.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-15, "{w:?}");
        assert!((w[1] - e / (1.0 + e)).abs() < 1e-15, "{w:?}");
    }

    #[test]
    fn weight_update_keeps_a_probability_vector() {
        let mut w = vec![0.2, 0.3, 0.5];
        let mut losses = [0.9, 0.1, 0.4];
        for k in 0..1000 {
            losses.rotate_left(k % 3);
            dro_weight_update(&mut w, &losses, 0.05).unwrap();
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "sum drifted to {sum} at step {k}");
            assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn higher_loss_strictly_gains_weight_share() {
        let mut w = vec![0.5, 0.5];
        dro_weight_update(&mut w, &[0.2, 0.8], 0.5).unwrap();
        assert!(w[1] > w[0]);
        // Relative order of the update is monotone in the loss gap.
        let mut w2 = vec![0.5, 0.5];
        dro_weight_update(&mut w2, &[0.2, 1.6], 0.5).unwrap();
        assert!(w2[1] > w[1]);
    }

    #[test]
    fn single_group_weight_is_exactly_one_forever() {
        let mut w = vec![1.0];
        for loss in [0.7, 2.3, 0.0, 11.0] {
            dro_weight_update(&mut w, &[loss], 0.9).unwrap();
            assert_eq!(w[0].to_bits(), 1.0f64.to_bits(), "weight drifted: {}", w[0]);
        }
    }

    #[test]
    fn weight_update_validates_inputs() {
        assert_eq!(
            dro_weight_update(&mut [0.5], &[0.1, 0.2], 0.1)
                .unwrap_err()
                .category(),
            "shape-mismatch"
        );
        assert_eq!(
            dro_weight_update(&mut [], &[], 0.1).unwrap_err().category(),
            "contract-violation"
        );
        assert_eq!(
            dro_weight_update(&mut [0.5, 0.5], &[0.0, 0.1], -1.0)
                .unwrap_err()
                .category(),
            "invalid-config"
        );
        assert_eq!(
            dro_weight_update(&mut [-0.5, 0.5], &[0.0, 0.1], 1.0)
                .unwrap_err()
                .category(),
            "domain"
        );
        assert_eq!(
            dro_weight_update(&mut [0.5, 0.5], &[f64::NAN, 0.1], 1.0)
                .unwrap_err()
                .category(),
            "numeric"
        );
    }

    #[test]
    fn group_keys_order_and_display() {
        let a = GroupKey { label: 0, z: false };
        let b = GroupKey { label: 0, z: true };
        let c = GroupKey { label: 1, z: false };
        assert!(a < b && b < c);
        assert_eq!(a.to_string(), "y=0,z=0");
        assert_eq!(b.to_string(), "y=0,z=1");
        assert_eq!(c.to_string(), "y=1,z=0");
    }

    #[test]
    fn groups_pair_labels_with_split_sides() {
        let dataset = Dataset::new(
            vec![
                Example { id: 0, features: vec![0.0], label: 1 },
                Example { id: 1, features: vec![1.0], label: 0 },
            ],
            None,
        )
        .unwrap();
        let groups = assign_groups(&dataset, &[true, false]).unwrap();
        assert_eq!(
            groups,
            vec![GroupKey { label: 1, z: true }, GroupKey { label: 0, z: false }]
        );
        assert_eq!(
            assign_groups(&dataset, &[true]).unwrap_err().category(),
            "shape-mismatch"
        );
    }

    /// Two interleaved classes separable on the first feature.
    fn separable(n: usize, id_base: u64) -> Dataset {
        let examples = (0..n)
            .map(|i| {
                let label = i % 2;
                let center = if label == 0 { -2.0 } else { 2.0 };
                Example {
                    id: id_base + i as u64,
                    features: vec![center + (i as f64 * 0.61).sin(), (i as f64 * 0.37).cos()],
                    label,
                }
            })
            .collect();
        Dataset::new(examples, Some(2)).unwrap()
    }

    fn small_config(seed: u64) -> DroConfig {
        DroConfig {
            hidden: vec![6],
            batch_size: 16,
            lr: 1e-2,
            max_epochs: 30,
            patience: 8,
            seed,
            ..DroConfig::default()
        }
    }

    #[test]
    fn erm_fits_separable_data() {
        let train = separable(48, 0);
        let val = separable(24, 1000);
        let (params, val_acc) = erm_train(&train, &val, &small_config(3)).unwrap();
        assert!(val_acc >= 0.9, "validation accuracy {val_acc}");
        // The returned metric describes the returned snapshot.
        let mut right = 0;
        for ex in val.examples() {
            let logits = forward_eval(&params, &ex.features).unwrap();
            if crate::engine::predictor::argmax(&logits) == ex.label {
                right += 1;
            }
        }
        assert_eq!(val_acc, right as f64 / val.len() as f64);
    }

    #[test]
    fn single_group_robust_run_is_bit_identical_to_plain_training() {
        let train = separable(40, 0);
        let val = separable(20, 500);
        // Nonzero weight decay and step size on purpose: the invariant
        // must hold for any step size because a one-element weight
        // vector renormalizes to exactly 1.0.
        let config = DroConfig {
            weight_decay: 0.01,
            group_step_size: 0.7,
            ..small_config(9)
        };
        let all_same_train = vec![GroupKey { label: 0, z: true }; train.len()];
        let all_same_val = vec![GroupKey { label: 0, z: true }; val.len()];
        let (erm_params, erm_metric) = erm_train(&train, &val, &config).unwrap();
        let (dro_params, dro_metric) =
            group_dro_train(&train, &all_same_train, &val, &all_same_val, &config).unwrap();
        assert_eq!(erm_params.flatten(), dro_params.flatten());
        assert_eq!(erm_metric.to_bits(), dro_metric.to_bits());
    }

    #[test]
    fn group_robust_metric_matches_reevaluation() {
        let train = separable(40, 0);
        let val = separable(20, 500);
        let train_sides: Vec<bool> = (0..40).map(|i| i % 3 != 0).collect();
        let val_sides: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let train_groups = assign_groups(&train, &train_sides).unwrap();
        let val_groups = assign_groups(&val, &val_sides).unwrap();
        let config = small_config(5);
        let (params, metric) =
            group_dro_train(&train, &train_groups, &val, &val_groups, &config).unwrap();
        let stats = evaluate_groups(&params, &val, &val_groups).unwrap();
        assert_eq!(metric.to_bits(), stats.worst_group_accuracy.to_bits());
        assert!(stats.worst_group_accuracy <= stats.average_accuracy + 1e-12);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let train = separable(32, 0);
        let val = separable(16, 200);
        let config = small_config(7);
        let (a, _) = erm_train(&train, &val, &config).unwrap();
        let (b, _) = erm_train(&train, &val, &config).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let other = DroConfig { seed: 8, ..config };
        let (c, _) = erm_train(&train, &val, &other).unwrap();
        assert_ne!(a.flatten(), c.flatten());
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let train = separable(20, 0);
        let val = separable(10, 100);
        let config = small_config(0);
        let groups = vec![GroupKey { label: 0, z: true }; 5];
        assert_eq!(
            group_dro_train(&train, &groups, &val, &groups, &config)
                .unwrap_err()
                .category(),
            "shape-mismatch"
        );
        let bad = DroConfig { lr: 0.0, ..config };
        assert_eq!(
            erm_train(&train, &val, &bad).unwrap_err().category(),
            "invalid-config"
        );
        // A validation-only group is tolerated (with a warning), not an
        // error.
        let train_groups = assign_groups(&train, &vec![true; 20]).unwrap();
        let val_groups = assign_groups(&val, &vec![false; 10]).unwrap();
        group_dro_train(&train, &train_groups, &val, &val_groups, &small_config(1)).unwrap();
    }
}
