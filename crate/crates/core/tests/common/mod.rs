//! Shared helpers for the integration tests.
//!
//! The centerpiece is a deliberately independent baseline learner: plain
//! full-batch logistic regression fit by gradient descent from a zero
//! initialization, with no randomness anywhere. It shares no code with the
//! MLP stack in the library, so agreement between the two is evidence about
//! the data and the pipeline rather than about one implementation.

use adversplit_core::Dataset;

/// Fits binary logistic regression with full-batch gradient descent.
///
/// Returns the learned parameters as `[w_0, ..., w_{d-1}, bias]`. Labels
/// must be 0 or 1. Deterministic: zero init, fixed epoch count, no sampling.
pub fn logistic_fit(features: &[Vec<f64>], labels: &[usize], lr: f64, epochs: usize) -> Vec<f64> {
    assert_eq!(features.len(), labels.len(), "features/labels length mismatch");
    assert!(!features.is_empty(), "cannot fit on zero examples");
    assert!(labels.iter().all(|&y| y < 2), "binary labels required");
    let n = features.len();
    let d = features[0].len();
    let mut params = vec![0.0; d + 1];
    let mut grad = vec![0.0; d + 1];
    for _ in 0..epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (x, &y) in features.iter().zip(labels) {
            let margin: f64 =
                x.iter().zip(&params[..d]).map(|(xi, wi)| xi * wi).sum::<f64>() + params[d];
            let p = 1.0 / (1.0 + (-margin).exp());
            let residual = p - y as f64;
            for (g, xi) in grad[..d].iter_mut().zip(x) {
                *g += residual * xi;
            }
            grad[d] += residual;
        }
        for (w, g) in params.iter_mut().zip(&grad) {
            *w -= lr * *g / n as f64;
        }
    }
    params
}

/// Fraction of examples the logistic parameters classify correctly
/// (decision rule: predict 1 when the pre-sigmoid margin is positive).
pub fn logistic_accuracy(params: &[f64], features: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(features.len(), labels.len(), "features/labels length mismatch");
    let d = params.len() - 1;
    let hits = features
        .iter()
        .zip(labels)
        .filter(|(x, &y)| {
            let margin: f64 =
                x.iter().zip(&params[..d]).map(|(xi, wi)| xi * wi).sum::<f64>() + params[d];
            (margin > 0.0) as usize == y
        })
        .count();
    hits as f64 / features.len() as f64
}

/// Extracts a contiguous block of feature columns from every example.
pub fn feature_columns(dataset: &Dataset, range: std::ops::Range<usize>) -> Vec<Vec<f64>> {
    dataset
        .examples()
        .iter()
        .map(|ex| ex.features[range.clone()].to_vec())
        .collect()
}

/// Convenience: fit on a column block and report training accuracy.
pub fn logistic_block_accuracy(dataset: &Dataset, range: std::ops::Range<usize>) -> f64 {
    let features = feature_columns(dataset, range);
    let labels = dataset.labels();
    let params = logistic_fit(&features, &labels, 0.5, 400);
    logistic_accuracy(&params, &features, &labels)
}
