//! Split state: per-example train-membership probabilities produced by
//! the splitter network, and realized train/test assignments sampled
//! from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{forward_eval, MlpParams};

/// How many fresh Bernoulli draws to attempt when a sampled assignment
/// leaves one side of the split empty.
const MAX_RESAMPLES: usize = 10;

/// A split of a dataset: the splitter's train-membership probability
/// for every example, one realized assignment drawn from those
/// probabilities, and (when the assignment was sampled rather than
/// loaded or thresholded) the seed that drew it.
///
/// `assignment[i] == true` puts example `i` in the train split;
/// `false` puts it in the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitState {
    pub probs: Vec<f64>,
    pub assignment: Vec<bool>,
    pub rng_seed: Option<u64>,
}

impl SplitState {
    /// Fraction of examples assigned to the train split.
    pub fn split_ratio(&self) -> f64 {
        if self.assignment.is_empty() {
            return 0.0;
        }
        let train = self.assignment.iter().filter(|&&z| z).count();
        train as f64 / self.assignment.len() as f64
    }

    /// Indices of train-split examples, in dataset order.
    pub fn train_indices(&self) -> Vec<usize> {
        indices_where(&self.assignment, true)
    }

    /// Indices of test-split examples, in dataset order.
    pub fn test_indices(&self) -> Vec<usize> {
        indices_where(&self.assignment, false)
    }

    /// Deterministic variant of this state that assigns each example to
    /// the train split exactly when its probability is at least 1/2.
    pub fn thresholded(&self) -> SplitState {
        SplitState {
            probs: self.probs.clone(),
            assignment: self.probs.iter().map(|&p| p >= 0.5).collect(),
            rng_seed: None,
        }
    }

    /// Checks that this state describes `dataset` and that neither side
    /// of the split is empty.
    pub fn validate_for(&self, dataset: &Dataset) -> Result<()> {
        if self.probs.len() != dataset.len() || self.assignment.len() != dataset.len() {
            return Err(Error::ShapeMismatch(format!(
                "split state covers {} probabilities / {} assignments but the dataset has {} examples",
                self.probs.len(),
                self.assignment.len(),
                dataset.len()
            )));
        }
        let train = self.assignment.iter().filter(|&&z| z).count();
        if train == 0 || train == self.assignment.len() {
            return Err(Error::DegenerateSplit(format!(
                "assignment puts all {} examples on one side",
                self.assignment.len()
            )));
        }
        Ok(())
    }
}

fn indices_where(assignment: &[bool], value: bool) -> Vec<usize> {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(i, &z)| (z == value).then_some(i))
        .collect()
}

/// Writes the splitter input for one example into `buf`: the feature
/// vector followed by a one-hot encoding of the label.
pub(crate) fn splitter_input(
    features: &[f64],
    label: usize,
    num_classes: usize,
    buf: &mut Vec<f64>,
) {
    buf.clear();
    buf.extend_from_slice(features);
    buf.extend(std::iter::repeat(0.0).take(num_classes));
    buf[features.len() + label] = 1.0;
}

/// Train-membership probability from a pair of split logits:
/// `softmax(logits)[1]`, clamped away from 0 and 1 so downstream logs
/// and KL terms stay finite.
pub(crate) fn train_prob_from_logits(logits: &[f64], prob_epsilon: f64) -> f64 {
    debug_assert_eq!(logits.len(), 2);
    let p = crate::nn::softmax(logits)[1];
    p.clamp(prob_epsilon, 1.0 - prob_epsilon)
}

/// Runs the splitter network over the whole dataset in evaluation mode
/// and returns each example's probability of joining the train split.
pub fn splitter_probabilities(
    splitter: &MlpParams,
    dataset: &Dataset,
    prob_epsilon: f64,
) -> Result<Vec<f64>> {
    let expected_in = dataset.feature_dim() + dataset.num_classes();
    if splitter.input_dim() != expected_in {
        return Err(Error::ShapeMismatch(format!(
            "splitter expects {} inputs but the dataset provides {} (features + one-hot label)",
            splitter.input_dim(),
            expected_in
        )));
    }
    if splitter.output_dim() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "splitter must emit 2 logits, found {}",
            splitter.output_dim()
        )));
    }
    if !(prob_epsilon > 0.0 && prob_epsilon < 0.5) {
        return Err(Error::InvalidConfig(format!(
            "prob_epsilon must lie in (0, 0.5), got {prob_epsilon}"
        )));
    }
    let mut probs = Vec::with_capacity(dataset.len());
    let mut buf = Vec::with_capacity(expected_in);
    for ex in dataset.examples() {
        splitter_input(&ex.features, ex.label, dataset.num_classes(), &mut buf);
        let logits = forward_eval(splitter, &buf)?;
        probs.push(train_prob_from_logits(&logits, prob_epsilon));
    }
    Ok(probs)
}

/// Samples one train/test assignment by flipping an independent coin
/// with probability `probs[i]` for each example. If a draw leaves
/// either side empty it is retried with fresh randomness up to
/// [`MAX_RESAMPLES`] times before reporting a degenerate split.
pub fn sample_split(probs: &[f64], rng_seed: u64) -> Result<Vec<bool>> {
    if probs.is_empty() {
        return Err(Error::ContractViolation(
            "cannot sample a split of zero examples".into(),
        ));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!(
            "split probabilities must lie in [0,1], found {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for _ in 0..=MAX_RESAMPLES {
        let assignment: Vec<bool> = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
        let train = assignment.iter().filter(|&&z| z).count();
        if train > 0 && train < assignment.len() {
            return Ok(assignment);
        }
    }
    Err(Error::DegenerateSplit(format!(
        "all {} draws left one side of the split empty (n = {})",
        MAX_RESAMPLES + 1,
        probs.len()
    )))
}

/// Log-probability of a realized assignment under independent
/// per-example Bernoulli draws: `sum_i ln(p_i if z_i else 1 - p_i)`.
pub fn assignment_log_prob(probs: &[f64], assignment: &[bool]) -> Result<f64> {
    if probs.len() != assignment.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities vs {} assignments",
            probs.len(),
            assignment.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::ContractViolation(
            "assignment log-probability of zero examples is undefined".into(),
        ));
    }
    Ok(probs
        .iter()
        .zip(assignment)
        .map(|(&p, &z)| if z { p.ln() } else { (1.0 - p).ln() })
        .sum())
}
