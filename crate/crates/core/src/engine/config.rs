//! Configuration for adversarial split search, plus the deterministic
//! seed-stream derivation that makes whole runs reproducible from one
//! root seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All knobs of the split-search procedure. Deserializes from JSON with
/// every missing field taking its default, so a config file only needs
/// to name the fields it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsConfig {
    /// Target marginal probability of landing in the train split.
    pub delta: f64,
    /// Adam learning rate for the splitter network.
    pub splitter_lr: f64,
    /// Adam learning rate for each freshly trained predictor.
    pub predictor_lr: f64,
    /// Minibatch size for both networks.
    pub batch_size: usize,
    /// Predictor early stopping: epochs without held-out improvement.
    pub predictor_patience: usize,
    /// Hard cap on predictor epochs (safety net; patience normally
    /// fires first). Zero is allowed and returns the untouched
    /// initialization, which is useful for observing the fresh-init
    /// guarantee.
    pub predictor_max_epochs: usize,
    /// Inner loop stops when the epoch-mean total loss improves by less
    /// than this versus the mean of the previous `inner_window` epochs.
    pub inner_stop_tol: f64,
    /// Number of trailing epochs the improvement is measured against.
    pub inner_window: usize,
    /// Hard cap on inner-loop epochs per outer iteration.
    pub inner_max_epochs: usize,
    /// Outer loop stops after this many iterations without a new best
    /// generalization gap.
    pub outer_patience: usize,
    /// Hard cap on outer iterations.
    pub max_outer_iters: usize,
    /// Fraction of the train split held out for predictor early
    /// stopping.
    pub heldout_fraction: f64,
    /// Splitter probabilities are clamped into
    /// `[prob_epsilon, 1 - prob_epsilon]`; the same epsilon smooths the
    /// categorical KL inside the label-balance penalty.
    pub prob_epsilon: f64,
    /// Dropout rate applied to hidden layers of both networks.
    pub dropout: f64,
    /// Hidden layer widths of the predictor (input/output widths come
    /// from the dataset).
    pub predictor_hidden: Vec<usize>,
    /// Hidden layer widths of the splitter (input is features plus a
    /// one-hot label, output is the two-way split logit pair).
    pub splitter_hidden: Vec<usize>,
    /// Weight of the generalization-gap term in the total loss.
    pub gap_weight: f64,
    /// Weight of the split-ratio penalty in the total loss. The default
    /// is deliberately strong: with a weak penalty the best-gap iteration
    /// tends to be one whose split drifted far from the target ratio,
    /// since starving the test side inflates the gap mechanically.
    pub omega1_weight: f64,
    /// Weight of the label-balance penalty in the total loss.
    pub omega2_weight: f64,
    /// Root seed; every random choice in a run derives from it.
    pub seed: u64,
}

impl Default for LsConfig {
    fn default() -> Self {
        LsConfig {
            delta: 0.75,
            splitter_lr: 1e-3,
            predictor_lr: 1e-3,
            batch_size: 200,
            predictor_patience: 5,
            predictor_max_epochs: 200,
            inner_stop_tol: 1e-3,
            inner_window: 5,
            inner_max_epochs: 200,
            outer_patience: 10,
            max_outer_iters: 50,
            heldout_fraction: 1.0 / 3.0,
            prob_epsilon: 1e-8,
            dropout: 0.1,
            predictor_hidden: vec![100],
            splitter_hidden: vec![100],
            gap_weight: 1.0,
            omega1_weight: 4.0,
            omega2_weight: 1.0,
            seed: 0,
        }
    }
}

impl LsConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(msg))
            }
        };
        check(
            self.delta.is_finite() && self.delta > 0.0 && self.delta < 1.0,
            format!("delta must lie in (0,1), got {}", self.delta),
        )?;
        for (name, lr) in [
            ("splitter_lr", self.splitter_lr),
            ("predictor_lr", self.predictor_lr),
        ] {
            check(
                lr.is_finite() && lr > 0.0,
                format!("{name} must be positive, got {lr}"),
            )?;
        }
        check(self.batch_size >= 1, "batch_size must be at least 1".into())?;
        check(
            self.predictor_patience >= 1,
            "predictor_patience must be at least 1".into(),
        )?;
        check(
            self.inner_stop_tol.is_finite() && self.inner_stop_tol >= 0.0,
            format!("inner_stop_tol must be nonnegative, got {}", self.inner_stop_tol),
        )?;
        check(self.inner_window >= 1, "inner_window must be at least 1".into())?;
        check(
            self.inner_max_epochs >= 1,
            "inner_max_epochs must be at least 1".into(),
        )?;
        check(self.outer_patience >= 1, "outer_patience must be at least 1".into())?;
        check(self.max_outer_iters >= 1, "max_outer_iters must be at least 1".into())?;
        check(
            self.heldout_fraction.is_finite()
                && self.heldout_fraction > 0.0
                && self.heldout_fraction < 1.0,
            format!(
                "heldout_fraction must lie in (0,1), got {}",
                self.heldout_fraction
            ),
        )?;
        check(
            self.prob_epsilon.is_finite()
                && self.prob_epsilon > 0.0
                && self.prob_epsilon < 0.5,
            format!("prob_epsilon must lie in (0, 0.5), got {}", self.prob_epsilon),
        )?;
        check(
            self.dropout.is_finite() && (0.0..1.0).contains(&self.dropout),
            format!("dropout must lie in [0,1), got {}", self.dropout),
        )?;
        for (name, dims) in [
            ("predictor_hidden", &self.predictor_hidden),
            ("splitter_hidden", &self.splitter_hidden),
        ] {
            check(
                dims.iter().all(|&d| d >= 1),
                format!("{name} widths must be positive, got {dims:?}"),
            )?;
        }
        for (name, w) in [
            ("gap_weight", self.gap_weight),
            ("omega1_weight", self.omega1_weight),
            ("omega2_weight", self.omega2_weight),
        ] {
            check(
                w.is_finite() && w >= 0.0,
                format!("{name} must be nonnegative, got {w}"),
            )?;
        }
        Ok(())
    }

    /// Full predictor architecture for a dataset with `feature_dim`
    /// inputs and `num_classes` outputs.
    pub fn predictor_dims(&self, feature_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.predictor_hidden.len() + 2);
        dims.push(feature_dim);
        dims.extend_from_slice(&self.predictor_hidden);
        dims.push(num_classes);
        dims
    }

    /// Full splitter architecture: input is the feature vector
    /// concatenated with a one-hot label; output is the two split logits.
    pub fn splitter_dims(&self, feature_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.splitter_hidden.len() + 2);
        dims.push(feature_dim + num_classes);
        dims.extend_from_slice(&self.splitter_hidden);
        dims.push(2);
        dims
    }
}

/// SplitMix64 finalizer: a cheap, well-dispersed 64-bit mixer.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent seed streams drawn from one root seed. Each (stream,
/// index) pair maps to a fixed 64-bit seed, so outer iteration `k`
/// always re-derives the same sampling/training/update seeds no matter
/// what happened in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    SplitterInit,
    SplitSample,
    Predictor,
    InnerLoop,
}

impl SeedStream {
    fn tag(self) -> u64 {
        match self {
            SeedStream::SplitterInit => 0xA1,
            SeedStream::SplitSample => 0xA2,
            SeedStream::Predictor => 0xA3,
            SeedStream::InnerLoop => 0xA4,
        }
    }
}

/// Derives the seed for `stream` at `index` from the root seed.
pub fn derive_seed(root: u64, stream: SeedStream, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ splitmix64(stream.tag())) ^ index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        LsConfig::default().validate().unwrap();
    }

    #[test]
    fn validation_rejects_out_of_range_fields() {
        let cases: Vec<Box<dyn Fn(&mut LsConfig)>> = vec![
            Box::new(|c| c.delta = 1.5),
            Box::new(|c| c.delta = 0.0),
            Box::new(|c| c.splitter_lr = 0.0),
            Box::new(|c| c.predictor_lr = -1.0),
            Box::new(|c| c.batch_size = 0),
            Box::new(|c| c.heldout_fraction = 1.0),
            Box::new(|c| c.prob_epsilon = 0.0),
            Box::new(|c| c.dropout = 1.0),
            Box::new(|c| c.max_outer_iters = 0),
            Box::new(|c| c.predictor_hidden = vec![0]),
            Box::new(|c| c.gap_weight = f64::NAN),
        ];
        for mutate in cases {
            let mut config = LsConfig::default();
            mutate(&mut config);
            assert_eq!(
                config.validate().unwrap_err().category(),
                "invalid-config",
                "expected rejection for {config:?}"
            );
        }
    }

    #[test]
    fn partial_json_overrides_defaults() {
        let config: LsConfig = serde_json::from_str(r#"{"delta": 0.6, "seed": 9}"#).unwrap();
        assert_eq!(config.delta, 0.6);
        assert_eq!(config.seed, 9);
        assert_eq!(config.batch_size, LsConfig::default().batch_size);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let parsed: std::result::Result<LsConfig, _> =
            serde_json::from_str(r#"{"detla": 0.6}"#);
        assert!(parsed.is_err(), "misspelled keys must not pass silently");
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, SeedStream::Predictor, 3);
        let b = derive_seed(7, SeedStream::Predictor, 3);
        assert_eq!(a, b);
        assert_ne!(a, derive_seed(7, SeedStream::Predictor, 4));
        assert_ne!(a, derive_seed(7, SeedStream::InnerLoop, 3));
        assert_ne!(a, derive_seed(8, SeedStream::Predictor, 3));
    }

    #[test]
    fn architecture_dims_wrap_hidden_layers() {
        let config = LsConfig::default();
        assert_eq!(config.predictor_dims(15, 2), vec![15, 100, 2]);
        assert_eq!(config.splitter_dims(15, 2), vec![17, 100, 2]);
    }
}
