//! Evaluation metrics shared by split search, de-biasing, and
//! label-noise scoring: KL divergences over Bernoulli/categorical
//! distributions, per-group accuracy summaries, and precision/recall of
//! noise detection together with the best achievable (oracle) values at
//! a given split size.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// KL(Bernoulli(p) || Bernoulli(q)) in nats. Both arguments must lie
/// strictly inside (0, 1); callers are expected to clamp first.
pub fn kl_bernoulli(p: f64, q: f64) -> Result<f64> {
    for (name, v) in [("p", p), ("q", q)] {
        if !(v.is_finite() && v > 0.0 && v < 1.0) {
            return Err(Error::Domain(format!(
                "kl_bernoulli requires {name} in (0,1), got {v}"
            )));
        }
    }
    Ok(p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln())
}

/// KL(p || q) for categorical distributions, in nats.
///
/// Both inputs are smoothed by adding `eps` to every cell and
/// renormalizing, so zero cells are tolerated; smoothing happens here
/// and nowhere else. Inputs must have equal lengths, nonnegative
/// entries, and sums within 1e-6 of 1.
pub fn kl_categorical(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "distributions of lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::ContractViolation(
            "kl_categorical over empty distributions".into(),
        ));
    }
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "smoothing epsilon must be nonnegative, got {eps}"
        )));
    }
    for (name, dist) in [("p", p), ("q", q)] {
        if dist.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::ContractViolation(format!(
                "{name} has a negative or non-finite entry"
            )));
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::ContractViolation(format!(
                "{name} sums to {sum}, expected 1 within 1e-6"
            )));
        }
    }
    let smooth = |dist: &[f64]| -> Vec<f64> {
        let total: f64 = dist.iter().map(|&v| v + eps).sum();
        dist.iter().map(|&v| (v + eps) / total).collect()
    };
    let ps = smooth(p);
    let qs = smooth(q);
    let mut kl = 0.0;
    for (pi, qi) in ps.iter().zip(&qs) {
        if *pi > 0.0 {
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

/// Accuracy summary for one group of examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub count: usize,
    pub accuracy: f64,
    /// Mean per-example loss, when the caller supplied losses.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_loss: Option<f64>,
}

/// Per-group and aggregate accuracy of a set of predictions. The worst
/// group is the minimum-accuracy group among groups that actually have
/// members; empty groups simply never appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub average_accuracy: f64,
    pub worst_group_accuracy: f64,
    pub worst_group_key: String,
    pub per_group: BTreeMap<String, GroupEntry>,
}

/// Groups examples by the display form of their key and reports
/// per-group and overall accuracy, plus mean loss per group when
/// `losses` is provided. Ties for the worst group resolve to the
/// lexicographically smallest key, so results are order-independent.
pub fn worst_group_accuracy<K: std::fmt::Display>(
    predictions: &[usize],
    labels: &[usize],
    group_keys: &[K],
    losses: Option<&[f64]>,
) -> Result<GroupStats> {
    if predictions.len() != labels.len() || predictions.len() != group_keys.len() {
        return Err(Error::ShapeMismatch(format!(
            "predictions/labels/groups have lengths {}/{}/{}",
            predictions.len(),
            labels.len(),
            group_keys.len()
        )));
    }
    if let Some(l) = losses {
        if l.len() != predictions.len() {
            return Err(Error::ShapeMismatch(format!(
                "losses have length {}, expected {}",
                l.len(),
                predictions.len()
            )));
        }
    }
    if predictions.is_empty() {
        return Err(Error::ContractViolation(
            "group accuracy over zero examples".into(),
        ));
    }
    struct Acc {
        count: usize,
        correct: usize,
        loss_sum: f64,
    }
    let mut groups: BTreeMap<String, Acc> = BTreeMap::new();
    let mut total_correct = 0usize;
    for i in 0..predictions.len() {
        let correct = predictions[i] == labels[i];
        total_correct += correct as usize;
        let entry = groups.entry(group_keys[i].to_string()).or_insert(Acc {
            count: 0,
            correct: 0,
            loss_sum: 0.0,
        });
        entry.count += 1;
        entry.correct += correct as usize;
        if let Some(l) = losses {
            entry.loss_sum += l[i];
        }
    }
    let per_group: BTreeMap<String, GroupEntry> = groups
        .into_iter()
        .map(|(key, acc)| {
            let entry = GroupEntry {
                count: acc.count,
                accuracy: acc.correct as f64 / acc.count as f64,
                mean_loss: losses.map(|_| acc.loss_sum / acc.count as f64),
            };
            (key, entry)
        })
        .collect();
    let (worst_key, worst) = per_group
        .iter()
        .min_by(|a, b| {
            a.1.accuracy
                .partial_cmp(&b.1.accuracy)
                .expect("accuracies are finite")
        })
        .expect("at least one group");
    Ok(GroupStats {
        average_accuracy: total_correct as f64 / predictions.len() as f64,
        worst_group_accuracy: worst.accuracy,
        worst_group_key: worst_key.clone(),
        per_group,
    })
}

/// Precision and recall of "the test split flags noisy labels":
/// examples assigned to the test side (`assignment[i] == false`) count
/// as flagged. With zero polluted examples recall is reported as 1.0 by
/// convention (see [`NoiseReport::recall_by_convention`]).
pub fn noise_precision_recall(assignment: &[bool], polluted: &[bool]) -> Result<(f64, f64)> {
    if assignment.len() != polluted.len() {
        return Err(Error::ShapeMismatch(format!(
            "assignment/polluted have lengths {}/{}",
            assignment.len(),
            polluted.len()
        )));
    }
    let n_test = assignment.iter().filter(|&&z| !z).count();
    if n_test == 0 {
        return Err(Error::DegenerateSplit(
            "no examples on the test side to score".into(),
        ));
    }
    let n_polluted = polluted.iter().filter(|&&p| p).count();
    let hits = assignment
        .iter()
        .zip(polluted)
        .filter(|(&z, &p)| !z && p)
        .count();
    let precision = hits as f64 / n_test as f64;
    let recall = if n_polluted == 0 {
        1.0
    } else {
        hits as f64 / n_polluted as f64
    };
    Ok((precision, recall))
}

/// Best achievable precision/recall for a detector that flags exactly
/// the test split: with `n_test_split` slots and `n_polluted` noisy
/// examples, a perfect detector packs `min(n_polluted, n_test_split)`
/// noisy examples into the test side.
pub fn oracle_precision_recall(n_polluted: usize, n_test_split: usize) -> Result<(f64, f64)> {
    if n_test_split == 0 {
        return Err(Error::Domain(
            "oracle undefined for an empty test split".into(),
        ));
    }
    if n_polluted <= n_test_split {
        // Every polluted example fits into the test side: recall 1
        // (conventionally also 1 when nothing is polluted).
        Ok((n_polluted as f64 / n_test_split as f64, 1.0))
    } else {
        Ok((1.0, n_test_split as f64 / n_polluted as f64))
    }
}

/// Full label-noise detection report for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub n_examples: usize,
    pub n_polluted: usize,
    pub n_test_split: usize,
    pub precision: f64,
    pub recall: f64,
    pub oracle_precision: f64,
    pub oracle_recall: f64,
    /// True when `recall` is the conventional 1.0 reported because no
    /// polluted examples exist, rather than a measured ratio.
    pub recall_by_convention: bool,
}

/// Builds a [`NoiseReport`] from a train/test assignment and the
/// ground-truth polluted mask.
pub fn noise_report(assignment: &[bool], polluted: &[bool]) -> Result<NoiseReport> {
    let (precision, recall) = noise_precision_recall(assignment, polluted)?;
    let n_polluted = polluted.iter().filter(|&&p| p).count();
    let n_test_split = assignment.iter().filter(|&&z| !z).count();
    let (oracle_precision, oracle_recall) = oracle_precision_recall(n_polluted, n_test_split)?;
    Ok(NoiseReport {
        n_examples: assignment.len(),
        n_polluted,
        n_test_split,
        precision,
        recall,
        oracle_precision,
        oracle_recall,
        recall_by_convention: n_polluted == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kl_bernoulli_matches_closed_forms() {
        assert_relative_eq!(kl_bernoulli(0.3, 0.3).unwrap(), 0.0, epsilon = 1e-15);
        // 0.5 ln(0.5/0.75) + 0.5 ln(0.5/0.25)
        assert_relative_eq!(
            kl_bernoulli(0.5, 0.75).unwrap(),
            0.1438410362258904,
            max_relative = 1e-12
        );
        // 0.8 ln 9
        assert_relative_eq!(
            kl_bernoulli(0.9, 0.1).unwrap(),
            0.8 * 9.0f64.ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn kl_bernoulli_rejects_boundary_values() {
        for (p, q) in [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.0), (f64::NAN, 0.5)] {
            assert_eq!(kl_bernoulli(p, q).unwrap_err().category(), "domain");
        }
    }

    #[test]
    fn kl_bernoulli_is_nonnegative_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let p = rng.random::<f64>() * 0.999998 + 1e-6;
            let q = rng.random::<f64>() * 0.999998 + 1e-6;
            let kl = kl_bernoulli(p, q).unwrap();
            assert!(kl >= -1e-12, "kl({p},{q}) = {kl}");
        }
    }

    #[test]
    fn kl_categorical_matches_closed_form() {
        // 0.6 ln 1.2 + 0.4 ln 0.8, eps perturbation far below tolerance.
        let kl = kl_categorical(&[0.6, 0.4], &[0.5, 0.5], 1e-8).unwrap();
        assert_relative_eq!(kl, 0.020135513550688863, epsilon = 1e-7);
        // Identical distributions: exactly zero after shared smoothing.
        assert_eq!(kl_categorical(&[0.3, 0.7], &[0.3, 0.7], 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn kl_categorical_smoothing_rescues_zero_cells() {
        let kl = kl_categorical(&[1.0, 0.0], &[0.5, 0.5], 1e-8).unwrap();
        assert!(kl.is_finite() && kl > 0.0);
        // Mass on a cell the reference assigns (almost) nothing to.
        let kl = kl_categorical(&[0.5, 0.5], &[1.0, 0.0], 1e-8).unwrap();
        assert!(kl.is_finite() && kl > 0.0);
    }

    #[test]
    fn kl_categorical_validates_inputs() {
        assert_eq!(
            kl_categorical(&[1.0], &[0.5, 0.5], 1e-8)
                .unwrap_err()
                .category(),
            "shape-mismatch"
        );
        assert_eq!(
            kl_categorical(&[0.7, 0.7], &[0.5, 0.5], 1e-8)
                .unwrap_err()
                .category(),
            "contract-violation"
        );
        assert_eq!(
            kl_categorical(&[-0.1, 1.1], &[0.5, 0.5], 1e-8)
                .unwrap_err()
                .category(),
            "contract-violation"
        );
    }

    #[test]
    fn kl_categorical_is_nonnegative_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10_000 {
            let k = 2 + (rng.random::<u32>() % 6) as usize;
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                let sum: f64 = raw.iter().sum();
                raw.iter().map(|v| v / sum).collect()
            };
            let p = draw(&mut rng);
            let q = draw(&mut rng);
            let kl = kl_categorical(&p, &q, 1e-8).unwrap();
            assert!(kl >= -1e-12, "kl({p:?},{q:?}) = {kl}");
        }
    }

    #[test]
    fn worst_group_single_group_equals_average() {
        let stats =
            worst_group_accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0], &["all"; 4], None).unwrap();
        assert_relative_eq!(stats.average_accuracy, 0.75);
        assert_relative_eq!(stats.worst_group_accuracy, 0.75);
        assert_eq!(stats.worst_group_key, "all");
        assert_eq!(stats.per_group.len(), 1);
    }

    #[test]
    fn worst_group_two_group_fixture() {
        let preds = [0, 0, 1, 1, 1, 0];
        let labels = [0, 1, 1, 1, 0, 0];
        let keys = ["a", "a", "a", "b", "b", "b"];
        let stats = worst_group_accuracy(&preds, &labels, &keys, None).unwrap();
        assert_relative_eq!(stats.per_group["a"].accuracy, 2.0 / 3.0);
        assert_relative_eq!(stats.per_group["b"].accuracy, 2.0 / 3.0);
        assert_relative_eq!(stats.average_accuracy, 4.0 / 6.0);
        // Tie resolves to the lexicographically smallest key.
        assert_eq!(stats.worst_group_key, "a");
    }

    #[test]
    fn worst_group_is_order_invariant() {
        let preds = [0, 1, 1, 0, 1];
        let labels = [0, 0, 1, 0, 1];
        let keys = ["x", "y", "x", "y", "x"];
        let base = worst_group_accuracy(&preds, &labels, &keys, None).unwrap();
        let perm = [4usize, 2, 0, 3, 1];
        let p2: Vec<usize> = perm.iter().map(|&i| preds[i]).collect();
        let l2: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let k2: Vec<&str> = perm.iter().map(|&i| keys[i]).collect();
        let shuffled = worst_group_accuracy(&p2, &l2, &k2, None).unwrap();
        assert_eq!(base, shuffled);
    }

    #[test]
    fn worst_group_records_mean_losses() {
        let stats = worst_group_accuracy(
            &[0, 0, 1],
            &[0, 1, 1],
            &["g0", "g0", "g1"],
            Some(&[0.2, 0.4, 1.0]),
        )
        .unwrap();
        assert_relative_eq!(stats.per_group["g0"].mean_loss.unwrap(), 0.3);
        assert_relative_eq!(stats.per_group["g1"].mean_loss.unwrap(), 1.0);
    }

    #[test]
    fn worst_group_validates_inputs() {
        assert_eq!(
            worst_group_accuracy(&[0], &[0, 1], &["a"], None)
                .unwrap_err()
                .category(),
            "shape-mismatch"
        );
        let empty: [&str; 0] = [];
        assert_eq!(
            worst_group_accuracy(&[], &[], &empty, None)
                .unwrap_err()
                .category(),
            "contract-violation"
        );
    }

    #[test]
    fn noise_precision_recall_known_cases() {
        // Test side = the two `false` slots; both polluted examples land there.
        let assignment = [true, false, true, false];
        let polluted = [false, true, false, true];
        let (p, r) = noise_precision_recall(&assignment, &polluted).unwrap();
        assert_relative_eq!(p, 1.0);
        assert_relative_eq!(r, 1.0);

        // One of three polluted in a test side of two.
        let assignment = [true, false, false, true, true];
        let polluted = [true, true, false, true, false];
        let (p, r) = noise_precision_recall(&assignment, &polluted).unwrap();
        assert_relative_eq!(p, 0.5);
        assert_relative_eq!(r, 1.0 / 3.0);
    }

    #[test]
    fn noise_recall_is_one_by_convention_without_pollution() {
        let (p, r) = noise_precision_recall(&[true, false], &[false, false]).unwrap();
        assert_relative_eq!(p, 0.0);
        assert_relative_eq!(r, 1.0);
        let report = noise_report(&[true, false], &[false, false]).unwrap();
        assert!(report.recall_by_convention);
        assert_relative_eq!(report.recall, 1.0);
    }

    #[test]
    fn noise_precision_recall_validates_inputs() {
        assert_eq!(
            noise_precision_recall(&[true, true], &[false, false])
                .unwrap_err()
                .category(),
            "degenerate-split"
        );
        assert_eq!(
            noise_precision_recall(&[true], &[false, false])
                .unwrap_err()
                .category(),
            "shape-mismatch"
        );
    }

    #[test]
    fn oracle_matches_piecewise_closed_form() {
        let (p, r) = oracle_precision_recall(6000, 15000).unwrap();
        assert_relative_eq!(p, 0.4);
        assert_relative_eq!(r, 1.0);
        let (p, r) = oracle_precision_recall(20000, 15000).unwrap();
        assert_relative_eq!(p, 1.0);
        assert_relative_eq!(r, 0.75);
        assert_eq!(
            oracle_precision_recall(10, 0).unwrap_err().category(),
            "domain"
        );
    }

    #[test]
    fn oracle_dominates_every_feasible_detector() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10_000 {
            let n_test = 1 + (rng.random::<u32>() % 1000) as usize;
            let n_polluted = (rng.random::<u32>() % 1200) as usize;
            let max_hits = n_test.min(n_polluted);
            let hits = if max_hits == 0 {
                0
            } else {
                (rng.random::<u32>() as usize) % (max_hits + 1)
            };
            let (op, or) = oracle_precision_recall(n_polluted, n_test).unwrap();
            let precision = hits as f64 / n_test as f64;
            let recall = if n_polluted == 0 {
                1.0
            } else {
                hits as f64 / n_polluted as f64
            };
            assert!(precision <= op + 1e-12, "{hits}/{n_test} vs oracle {op}");
            assert!(recall <= or + 1e-12, "{hits}/{n_polluted} vs oracle {or}");
        }
    }
}
