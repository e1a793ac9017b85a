//! Predictor training and generalization-gap measurement.
//!
//! Every outer iteration trains a classifier from a fresh random
//! initialization on the current train split, early-stopping on a
//! held-out slice of that split, then measures how much worse it does
//! on the test split. The per-example correctness flags on the test
//! split are the supervision signal for the splitter.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::engine::config::{splitmix64, LsConfig};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, backward, forward, forward_eval, init_params, softmax_cross_entropy, AdamState,
    DropoutSpec, MlpGrads, MlpParams, Mode,
};

/// Accuracy of a predictor on each side of a split, their difference,
/// and the per-example correctness of the test side.
///
/// `test_correct[k]` refers to the k-th test-split example in
/// increasing dataset order (the same order `SplitState::test_indices`
/// yields).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub gap: f64,
    pub test_correct: Vec<bool>,
}

impl GapStats {
    /// Fraction of test-split examples the predictor got right —
    /// identical to `test_accuracy`, recomputed from the flags.
    pub fn test_correct_fraction(&self) -> f64 {
        if self.test_correct.is_empty() {
            return 0.0;
        }
        let right = self.test_correct.iter().filter(|&&c| c).count();
        right as f64 / self.test_correct.len() as f64
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted class for every example, in dataset order.
pub fn predictions(params: &MlpParams, dataset: &Dataset) -> Result<Vec<usize>> {
    if params.input_dim() != dataset.feature_dim() {
        return Err(Error::ShapeMismatch(format!(
            "predictor expects {} features, dataset has {}",
            params.input_dim(),
            dataset.feature_dim()
        )));
    }
    if params.output_dim() != dataset.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "predictor emits {} classes, dataset has {}",
            params.output_dim(),
            dataset.num_classes()
        )));
    }
    let mut out = Vec::with_capacity(dataset.len());
    for ex in dataset.examples() {
        let logits = forward_eval(params, &ex.features)?;
        out.push(argmax(&logits));
    }
    Ok(out)
}

fn accuracy_on(params: &MlpParams, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    debug_assert!(!indices.is_empty());
    let mut right = 0usize;
    for &i in indices {
        let ex = dataset.example(i);
        let logits = forward_eval(params, &ex.features)?;
        if argmax(&logits) == ex.label {
            right += 1;
        }
    }
    Ok(right as f64 / indices.len() as f64)
}

/// Trains a freshly initialized classifier on the train split of
/// `assignment` and returns the parameter snapshot with the best
/// held-out accuracy, along with that accuracy.
///
/// A random third (by default) of the train split is held out; training
/// stops once the held-out accuracy has gone `predictor_patience`
/// epochs without improving, or at `predictor_max_epochs`. With
/// `predictor_max_epochs == 0` the untouched initialization comes back,
/// which pins down the fresh-start guarantee: the result is exactly
/// `init_params(dims, seed)`.
pub fn train_predictor(
    dataset: &Dataset,
    assignment: &[bool],
    config: &LsConfig,
    seed: u64,
) -> Result<(MlpParams, f64)> {
    config.validate()?;
    if assignment.len() != dataset.len() {
        return Err(Error::ShapeMismatch(format!(
            "assignment covers {} examples, dataset has {}",
            assignment.len(),
            dataset.len()
        )));
    }
    let train_indices: Vec<usize> = assignment
        .iter()
        .enumerate()
        .filter_map(|(i, &z)| z.then_some(i))
        .collect();
    if train_indices.len() < 3 {
        return Err(Error::TrainingInfeasible(format!(
            "train split has {} examples; at least 3 are needed to fit with a held-out slice",
            train_indices.len()
        )));
    }
    let first_label = dataset.example(train_indices[0]).label;
    if train_indices
        .iter()
        .all(|&i| dataset.examples()[i].label == first_label)
    {
        return Err(Error::TrainingInfeasible(format!(
            "train split contains only class {first_label}; a classifier fit on it is vacuous"
        )));
    }

    let dims = config.predictor_dims(dataset.feature_dim(), dataset.num_classes());
    let mut params = init_params(&dims, seed)?;
    // Shuffles and dropout draw from a stream decorrelated from the
    // initialization stream, so the fresh-init guarantee stays exact.
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let dropout = DropoutSpec::new(config.dropout)?;

    let mut pool = train_indices.clone();
    pool.shuffle(&mut rng);
    let heldout_count = ((pool.len() as f64 * config.heldout_fraction).floor() as usize)
        .clamp(1, pool.len() - 1);
    let heldout: Vec<usize> = pool[..heldout_count].to_vec();
    let mut fit: Vec<usize> = pool[heldout_count..].to_vec();

    let mut best_params = params.clone();
    let mut best_acc = accuracy_on(&params, dataset, &heldout)?;
    let mut stale = 0usize;
    let mut adam = AdamState::new(&params);

    for _epoch in 0..config.predictor_max_epochs {
        fit.shuffle(&mut rng);
        for batch in fit.chunks(config.batch_size) {
            let mut grads = MlpGrads::zeros_like(&params);
            for &i in batch {
                let ex = dataset.example(i);
                let (logits, cache) = forward(&params, &ex.features, Mode::Train, &dropout, &mut rng)?;
                let (_, dlogits) = softmax_cross_entropy(&logits, ex.label)?;
                grads.add_assign(&backward(&params, &cache, &dlogits)?)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut params, &grads, &mut adam, config.predictor_lr)?;
        }
        let acc = accuracy_on(&params, dataset, &heldout)?;
        if acc > best_acc {
            best_acc = acc;
            best_params = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.predictor_patience {
                break;
            }
        }
    }
    Ok((best_params, best_acc))
}

/// Evaluates a trained predictor on both sides of a split and packages
/// the generalization gap (train accuracy minus test accuracy) together
/// with the test side's per-example correctness flags.
pub fn evaluate_gap(
    predictor: &MlpParams,
    dataset: &Dataset,
    assignment: &[bool],
) -> Result<GapStats> {
    if assignment.len() != dataset.len() {
        return Err(Error::ShapeMismatch(format!(
            "assignment covers {} examples, dataset has {}",
            assignment.len(),
            dataset.len()
        )));
    }
    let train = assignment.iter().filter(|&&z| z).count();
    if train == 0 || train == assignment.len() {
        return Err(Error::DegenerateSplit(format!(
            "gap evaluation needs both split sides populated; train side has {train} of {}",
            assignment.len()
        )));
    }
    let preds = predictions(predictor, dataset)?;
    let mut train_right = 0usize;
    let mut test_right = 0usize;
    let mut test_correct = Vec::with_capacity(assignment.len() - train);
    for (i, (&z, &pred)) in assignment.iter().zip(&preds).enumerate() {
        let correct = pred == dataset.examples()[i].label;
        if z {
            train_right += usize::from(correct);
        } else {
            test_right += usize::from(correct);
            test_correct.push(correct);
        }
    }
    let train_accuracy = train_right as f64 / train as f64;
    let test_accuracy = test_right as f64 / (assignment.len() - train) as f64;
    Ok(GapStats {
        train_accuracy,
        test_accuracy,
        gap: train_accuracy - test_accuracy,
        test_correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Example;
    use crate::nn::LayerTensors;

    /// Linear net on one feature with logits [-4x, 4x]: predicts class
    /// 1 exactly when x > 0.
    fn sign_predictor() -> MlpParams {
        MlpParams::from_layers(
            vec![1, 2],
            vec![LayerTensors {
                w: vec![-4.0, 4.0],
                b: vec![0.0, 0.0],
            }],
        )
        .unwrap()
    }

    fn labeled(points: &[(f64, usize)]) -> Dataset {
        let examples = points
            .iter()
            .enumerate()
            .map(|(i, &(x, label))| Example {
                id: i as u64,
                features: vec![x],
                label,
            })
            .collect();
        Dataset::new(examples, Some(2)).unwrap()
    }

    #[test]
    fn perfect_predictor_has_zero_gap() {
        let dataset = labeled(&[(-1.0, 0), (2.0, 1), (-3.0, 0), (4.0, 1)]);
        let stats =
            evaluate_gap(&sign_predictor(), &dataset, &[true, true, false, false]).unwrap();
        assert_eq!(stats.train_accuracy, 1.0);
        assert_eq!(stats.test_accuracy, 1.0);
        assert_eq!(stats.gap, 0.0);
        assert_eq!(stats.test_correct, vec![true, true]);
    }

    #[test]
    fn inverted_predictor_is_wrong_everywhere() {
        // Labels flipped relative to the sign rule: accuracy 0 on both
        // sides, gap still 0.
        let dataset = labeled(&[(-1.0, 1), (2.0, 0), (-3.0, 1), (4.0, 0)]);
        let stats =
            evaluate_gap(&sign_predictor(), &dataset, &[true, true, false, false]).unwrap();
        assert_eq!(stats.train_accuracy, 0.0);
        assert_eq!(stats.test_accuracy, 0.0);
        assert_eq!(stats.gap, 0.0);
        assert_eq!(stats.test_correct, vec![false, false]);
    }

    #[test]
    fn hand_counted_gap_on_a_mixed_fixture() {
        // Train side: 10 examples, 9 follow the sign rule. Test side: 4
        // examples, 1 follows it. Gap = 0.9 - 0.25 = 0.65.
        let mut points: Vec<(f64, usize)> = Vec::new();
        for i in 0..9 {
            let x = (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 };
            points.push((x, usize::from(x > 0.0)));
        }
        points.push((5.0, 0)); // train-side mistake
        points.push((6.0, 1)); // test hit
        points.push((7.0, 0)); // test miss
        points.push((-8.0, 1)); // test miss
        points.push((-9.0, 1)); // test miss
        let dataset = labeled(&points);
        let mut assignment = vec![true; 10];
        assignment.extend([false; 4]);
        let stats = evaluate_gap(&sign_predictor(), &dataset, &assignment).unwrap();
        assert_eq!(stats.train_accuracy, 0.9);
        assert_eq!(stats.test_accuracy, 0.25);
        assert!((stats.gap - 0.65).abs() < 1e-15);
        assert_eq!(stats.test_correct, vec![true, false, false, false]);
        assert_eq!(stats.test_correct_fraction(), stats.test_accuracy);
    }

    #[test]
    fn gap_requires_both_sides() {
        let dataset = labeled(&[(-1.0, 0), (2.0, 1)]);
        let err = evaluate_gap(&sign_predictor(), &dataset, &[true, true]).unwrap_err();
        assert_eq!(err.category(), "degenerate-split");
        let err = evaluate_gap(&sign_predictor(), &dataset, &[false, false]).unwrap_err();
        assert_eq!(err.category(), "degenerate-split");
        let err = evaluate_gap(&sign_predictor(), &dataset, &[true]).unwrap_err();
        assert_eq!(err.category(), "shape-mismatch");
    }

    #[test]
    fn predictions_validate_dimensions() {
        let dataset = labeled(&[(-1.0, 0), (2.0, 1)]);
        let wide = init_params(&[3, 2], 0).unwrap();
        assert_eq!(
            predictions(&wide, &dataset).unwrap_err().category(),
            "shape-mismatch"
        );
        let three_class = init_params(&[1, 3], 0).unwrap();
        assert_eq!(
            predictions(&three_class, &dataset).unwrap_err().category(),
            "shape-mismatch"
        );
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
        assert_eq!(argmax(&[-2.0, -1.0]), 1);
    }

    fn separable_dataset(n: usize) -> Dataset {
        // Class 0 near -3, class 1 near +3: linearly separable with a
        // wide margin.
        let examples = (0..n)
            .map(|i| {
                let label = i % 2;
                let offset = (i as f64 * 0.018).sin(); // small in-class spread
                Example {
                    id: i as u64,
                    features: vec![if label == 0 { -3.0 } else { 3.0 } + offset],
                    label,
                }
            })
            .collect();
        Dataset::new(examples, Some(2)).unwrap()
    }

    #[test]
    fn training_fits_separable_data() {
        let dataset = separable_dataset(60);
        let config = LsConfig {
            predictor_hidden: vec![8],
            predictor_max_epochs: 60,
            batch_size: 20,
            ..LsConfig::default()
        };
        let assignment = vec![true; 60];
        let (params, heldout_acc) = train_predictor(&dataset, &assignment, &config, 5).unwrap();
        assert!(heldout_acc >= 0.9, "held-out accuracy {heldout_acc}");
        let preds = predictions(&params, &dataset).unwrap();
        let right = preds
            .iter()
            .zip(dataset.labels())
            .filter(|(p, y)| **p == *y)
            .count();
        assert!(right >= 54, "{right}/60 correct");
    }

    #[test]
    fn zero_epochs_returns_the_exact_fresh_initialization() {
        let dataset = separable_dataset(30);
        let config = LsConfig {
            predictor_max_epochs: 0,
            ..LsConfig::default()
        };
        let assignment = vec![true; 30];
        let seed = 77;
        let (params, _) = train_predictor(&dataset, &assignment, &config, seed).unwrap();
        let dims = config.predictor_dims(dataset.feature_dim(), dataset.num_classes());
        let fresh = init_params(&dims, seed).unwrap();
        assert_eq!(params.flatten(), fresh.flatten(), "init must be untouched");
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let dataset = separable_dataset(30);
        let config = LsConfig {
            predictor_hidden: vec![6],
            predictor_max_epochs: 10,
            batch_size: 10,
            ..LsConfig::default()
        };
        let assignment: Vec<bool> = (0..30).map(|i| i % 3 != 0).collect();
        let (a, acc_a) = train_predictor(&dataset, &assignment, &config, 3).unwrap();
        let (b, acc_b) = train_predictor(&dataset, &assignment, &config, 3).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        assert_eq!(acc_a, acc_b);
        let (c, _) = train_predictor(&dataset, &assignment, &config, 4).unwrap();
        assert_ne!(a.flatten(), c.flatten(), "different seeds should differ");
    }

    #[test]
    fn infeasible_train_splits_are_rejected() {
        let dataset = separable_dataset(10);
        let config = LsConfig::default();
        // Two train examples: too few to carve out a held-out slice.
        let mut tiny = vec![false; 10];
        tiny[0] = true;
        tiny[1] = true;
        assert_eq!(
            train_predictor(&dataset, &tiny, &config, 0)
                .unwrap_err()
                .category(),
            "training-infeasible"
        );
        // All even indices share label 0 in `separable_dataset`.
        let single_class: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        assert_eq!(
            train_predictor(&dataset, &single_class, &config, 0)
                .unwrap_err()
                .category(),
            "training-infeasible"
        );
        assert_eq!(
            train_predictor(&dataset, &[true; 3], &config, 0)
                .unwrap_err()
                .category(),
            "shape-mismatch"
        );
    }
}
