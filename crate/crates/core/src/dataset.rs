//! In-memory labeled dataset: the single data container every stage of
//! the pipeline (generation, split search, de-biasing, noise scoring)
//! operates on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled example. `id` is the stable external identity used to
/// join datasets with split files; it survives CSV round-trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
}

/// A labeled dataset with a fixed feature dimension and class count.
///
/// Invariants, enforced by [`Dataset::new`]:
/// - at least one example;
/// - every feature vector has the same length and only finite entries;
/// - every label is `< num_classes`;
/// - ids are unique.
///
/// `num_classes` may exceed the number of classes actually present
/// (e.g. a 10-class file whose sample happens to miss a class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<Example>,
    feature_dim: usize,
    num_classes: usize,
}

impl Dataset {
    /// Builds a dataset, inferring `num_classes` as `max(label) + 1`
    /// when `num_classes` is `None`.
    pub fn new(examples: Vec<Example>, num_classes: Option<usize>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let feature_dim = examples[0].features.len();
        let max_label = examples.iter().map(|e| e.label).max().expect("nonempty");
        let num_classes = match num_classes {
            Some(c) => {
                if max_label >= c {
                    return Err(Error::IndexOutOfRange(format!(
                        "label {max_label} out of range for {c} classes"
                    )));
                }
                c
            }
            None => max_label + 1,
        };
        let mut seen_ids = std::collections::BTreeSet::new();
        for ex in &examples {
            if ex.features.len() != feature_dim {
                return Err(Error::ShapeMismatch(format!(
                    "example id {} has {} features, expected {feature_dim}",
                    ex.id,
                    ex.features.len()
                )));
            }
            if ex.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "example id {} has a non-finite feature",
                    ex.id
                )));
            }
            if !seen_ids.insert(ex.id) {
                return Err(Error::ContractViolation(format!(
                    "duplicate example id {}",
                    ex.id
                )));
            }
        }
        Ok(Dataset {
            examples,
            feature_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn example(&self, index: usize) -> &Example {
        &self.examples[index]
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.examples.iter().map(|e| e.id).collect()
    }

    /// Number of distinct classes actually present.
    pub fn classes_present(&self) -> usize {
        let mut seen = vec![false; self.num_classes];
        for ex in &self.examples {
            seen[ex.label] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }

    /// New dataset holding the examples at `indices` (same class count).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let examples = indices
            .iter()
            .map(|&i| {
                self.examples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::IndexOutOfRange(format!("example index {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(examples, Some(self.num_classes))
    }

    /// Replaces every label via `f`, keeping ids and features.
    pub fn with_labels(&self, f: impl Fn(usize, &Example) -> usize) -> Result<Self> {
        let examples = self
            .examples
            .iter()
            .enumerate()
            .map(|(i, ex)| Example {
                id: ex.id,
                features: ex.features.clone(),
                label: f(i, ex),
            })
            .collect();
        Dataset::new(examples, Some(self.num_classes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: u64, features: Vec<f64>, label: usize) -> Example {
        Example {
            id,
            features,
            label,
        }
    }

    #[test]
    fn infers_class_count_from_max_label() {
        let d = Dataset::new(
            vec![ex(0, vec![0.0], 0), ex(1, vec![1.0], 4)],
            None,
        )
        .unwrap();
        assert_eq!(d.num_classes(), 5);
        assert_eq!(d.classes_present(), 2);
    }

    #[test]
    fn rejects_label_outside_configured_range() {
        let err = Dataset::new(vec![ex(0, vec![0.0], 3)], Some(3)).unwrap_err();
        assert_eq!(err.category(), "index-out-of-range");
    }

    #[test]
    fn rejects_ragged_features_duplicate_ids_and_empty() {
        let err =
            Dataset::new(vec![ex(0, vec![0.0], 0), ex(1, vec![0.0, 1.0], 0)], None).unwrap_err();
        assert_eq!(err.category(), "shape-mismatch");

        let err = Dataset::new(vec![ex(7, vec![0.0], 0), ex(7, vec![1.0], 0)], None).unwrap_err();
        assert_eq!(err.category(), "contract-violation");

        let err = Dataset::new(vec![], None).unwrap_err();
        assert_eq!(err.category(), "empty-dataset");
    }

    #[test]
    fn rejects_non_finite_features() {
        let err = Dataset::new(vec![ex(0, vec![f64::NAN], 0)], None).unwrap_err();
        assert_eq!(err.category(), "numeric");
    }

    #[test]
    fn subset_preserves_class_count() {
        let d = Dataset::new(
            vec![ex(0, vec![0.0], 0), ex(1, vec![1.0], 1), ex(2, vec![2.0], 2)],
            None,
        )
        .unwrap();
        let s = d.subset(&[0, 2]).unwrap();
        assert_eq!(s.num_classes(), 3);
        assert_eq!(s.ids(), vec![0, 2]);
    }
}
