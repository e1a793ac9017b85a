//! Synthetic dataset construction and dataset file I/O.
//!
//! Two generator families cover the behaviors the split-search engine is
//! supposed to expose at desk scale:
//! - [`gen_spurious`]: binary labels with a fully predictive (noisy)
//!   core block plus an almost-noiseless shortcut block that agrees with
//!   the label only `rho` of the time — the classic spurious-correlation
//!   setup;
//! - [`gen_blobs`] + [`inject_label_noise`]: well-separated Gaussian
//!   class clusters whose labels are then independently corrupted — the
//!   label-noise setup.
//!
//! Datasets travel as CSV with header `id,f0..f{d-1},label` plus
//! optional audit columns `spurious` and `polluted`. Floats are written
//! with 17 significant digits so a save/load round-trip reproduces every
//! `f64` bit-exactly.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Example};
use crate::error::{Error, Result};

/// Standard deviation of the shortcut block: small enough that the
/// shortcut is the path of least resistance for any gradient learner.
const SPURIOUS_NOISE_STD: f64 = 0.1;

/// Parameters of the spurious-correlation generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousSpec {
    /// Number of examples.
    pub n: usize,
    /// Dimensions carrying the true (label-aligned) signal.
    pub d_core: usize,
    /// Dimensions carrying the shortcut attribute.
    pub d_spurious: usize,
    /// Pure-noise dimensions.
    pub d_noise: usize,
    /// Probability that the shortcut attribute agrees with the label.
    pub rho: f64,
    /// Noise level of the core block (the shortcut block is fixed at
    /// std 0.1, so larger values make the shortcut comparatively easier).
    pub core_noise_std: f64,
    pub seed: u64,
}

impl Default for SpuriousSpec {
    fn default() -> Self {
        SpuriousSpec {
            n: 2000,
            d_core: 5,
            d_spurious: 5,
            d_noise: 5,
            rho: 0.9,
            core_noise_std: 2.0,
            seed: 0,
        }
    }
}

/// Per-example generation-time facts that no training stage may read:
/// the shortcut attribute and/or the label-corruption mask. Written to
/// and read from the optional CSV audit columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Shortcut attribute `a` per example (spurious-correlation data).
    pub spurious: Option<Vec<u8>>,
    /// True where the stored label differs from the original one.
    pub polluted: Option<Vec<bool>>,
}

impl GroundTruth {
    pub fn is_empty(&self) -> bool {
        self.spurious.is_none() && self.polluted.is_none()
    }

    /// Minority mask: examples whose shortcut attribute disagrees with
    /// their label. `None` when no shortcut attribute is recorded.
    pub fn minority(&self, dataset: &Dataset) -> Option<Vec<bool>> {
        self.spurious.as_ref().map(|attrs| {
            attrs
                .iter()
                .zip(dataset.examples())
                .map(|(&a, ex)| a as usize != ex.label)
                .collect()
        })
    }
}

/// Generates the spurious-correlation dataset: fair-coin labels, a
/// shortcut attribute equal to the label with probability `rho`, and
/// three feature blocks laid out as `[core | spurious | noise]`:
/// core dims are `(2y-1) + N(0, core_noise_std)`, shortcut dims are
/// `(2a-1) + N(0, 0.1)`, noise dims are `N(0, 1)`.
pub fn gen_spurious(spec: &SpuriousSpec) -> Result<(Dataset, GroundTruth)> {
    if spec.n == 0 {
        return Err(Error::InvalidConfig("n must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.rho) || !spec.rho.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "rho must lie in [0,1], got {}",
            spec.rho
        )));
    }
    if !(spec.core_noise_std.is_finite() && spec.core_noise_std >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "core_noise_std must be nonnegative, got {}",
            spec.core_noise_std
        )));
    }
    if spec.d_core + spec.d_spurious + spec.d_noise == 0 {
        return Err(Error::InvalidConfig(
            "at least one feature dimension is required".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let core_noise = Normal::new(0.0, spec.core_noise_std.max(f64::MIN_POSITIVE))
        .expect("validated std");
    let spur_noise = Normal::new(0.0, SPURIOUS_NOISE_STD).expect("constant std");
    let unit_noise = Normal::new(0.0, 1.0).expect("constant std");
    let mut examples = Vec::with_capacity(spec.n);
    let mut attrs = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let y = usize::from(rng.random::<f64>() < 0.5);
        let a = if rng.random::<f64>() < spec.rho {
            y
        } else {
            1 - y
        };
        let y_sign = 2.0 * y as f64 - 1.0;
        let a_sign = 2.0 * a as f64 - 1.0;
        let mut features = Vec::with_capacity(spec.d_core + spec.d_spurious + spec.d_noise);
        for _ in 0..spec.d_core {
            features.push(y_sign + core_noise.sample(&mut rng));
        }
        for _ in 0..spec.d_spurious {
            features.push(a_sign + spur_noise.sample(&mut rng));
        }
        for _ in 0..spec.d_noise {
            features.push(unit_noise.sample(&mut rng));
        }
        examples.push(Example {
            id: i as u64,
            features,
            label: y,
        });
        attrs.push(a as u8);
    }
    let dataset = Dataset::new(examples, Some(2))?;
    Ok((
        dataset,
        GroundTruth {
            spurious: Some(attrs),
            polluted: None,
        },
    ))
}

/// Gaussian class clusters: example of class `c` is drawn from
/// `N(separation * e_{c mod dim}, I)`. With `separation` of a few units
/// the classes barely overlap, so any label that later disagrees with
/// its cluster is detectable in principle.
pub fn gen_blobs(
    n: usize,
    num_classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be positive".into()));
    }
    if num_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidConfig("dim must be positive".into()));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("constant std");
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let label = rng.random_range(0..num_classes);
        let anchor = label % dim;
        let features = (0..dim)
            .map(|d| {
                let mean = if d == anchor { separation } else { 0.0 };
                mean + unit.sample(&mut rng)
            })
            .collect();
        examples.push(Example {
            id: i as u64,
            features,
            label,
        });
    }
    Dataset::new(examples, Some(num_classes))
}

/// Independently corrupts each label: with probability `1 - eta` the
/// label is kept, otherwise it is replaced by one of the `C - 1` other
/// classes chosen uniformly. Returns the corrupted dataset and the mask
/// of changed labels (whose expected fraction is exactly `eta`).
pub fn inject_label_noise(
    dataset: &Dataset,
    eta: f64,
    num_classes: usize,
    seed: u64,
) -> Result<(Dataset, Vec<bool>)> {
    if !(0.0..=1.0).contains(&eta) || !eta.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "eta must lie in [0,1], got {eta}"
        )));
    }
    if num_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "label noise needs at least 2 classes, got {num_classes}"
        )));
    }
    if num_classes < dataset.num_classes() {
        return Err(Error::ContractViolation(format!(
            "num_classes {num_classes} is smaller than the dataset's {}",
            dataset.num_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut polluted = vec![false; dataset.len()];
    let mut new_labels = Vec::with_capacity(dataset.len());
    for (i, ex) in dataset.examples().iter().enumerate() {
        if rng.random::<f64>() < eta {
            let wrong = rng.random_range(0..num_classes - 1);
            let label = if wrong >= ex.label { wrong + 1 } else { wrong };
            polluted[i] = true;
            new_labels.push(label);
        } else {
            new_labels.push(ex.label);
        }
    }
    let examples = dataset
        .examples()
        .iter()
        .zip(&new_labels)
        .map(|(ex, &label)| Example {
            id: ex.id,
            features: ex.features.clone(),
            label,
        })
        .collect();
    let noisy = Dataset::new(examples, Some(num_classes))?;
    Ok((noisy, polluted))
}

/// 17-significant-digit decimal form: parses back to the identical f64.
fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a dataset (plus any audit columns) as CSV. Column order is
/// `id, f0..f{d-1}, label` followed by `spurious` and/or `polluted`
/// when present in `ground_truth`.
pub fn save_dataset(
    dataset: &Dataset,
    ground_truth: Option<&GroundTruth>,
    path: &Path,
) -> Result<()> {
    if let Some(gt) = ground_truth {
        for (name, len) in [
            ("spurious", gt.spurious.as_ref().map(Vec::len)),
            ("polluted", gt.polluted.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != dataset.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{name} column has {len} entries for {} examples",
                        dataset.len()
                    )));
                }
            }
        }
    }
    let spurious = ground_truth.and_then(|gt| gt.spurious.as_ref());
    let polluted = ground_truth.and_then(|gt| gt.polluted.as_ref());
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    let mut header = String::from("id");
    for d in 0..dataset.feature_dim() {
        header.push_str(&format!(",f{d}"));
    }
    header.push_str(",label");
    if spurious.is_some() {
        header.push_str(",spurious");
    }
    if polluted.is_some() {
        header.push_str(",polluted");
    }
    writeln!(out, "{header}")?;
    for (i, ex) in dataset.examples().iter().enumerate() {
        let mut row = ex.id.to_string();
        for v in &ex.features {
            row.push(',');
            row.push_str(&format_float(*v));
        }
        row.push_str(&format!(",{}", ex.label));
        if let Some(attrs) = spurious {
            row.push_str(&format!(",{}", attrs[i]));
        }
        if let Some(mask) = polluted {
            row.push_str(&format!(",{}", u8::from(mask[i])));
        }
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

struct HeaderLayout {
    feature_dim: usize,
    spurious_col: Option<usize>,
    polluted_col: Option<usize>,
    width: usize,
}

fn parse_header(header: &csv::StringRecord) -> Result<HeaderLayout> {
    let fields: Vec<&str> = header.iter().collect();
    let bad_header = |msg: String| Error::Parse { line: 1, msg };
    if fields.first() != Some(&"id") {
        return Err(bad_header("first column must be 'id'".into()));
    }
    let mut idx = 1;
    let mut feature_dim = 0;
    while idx < fields.len() && fields[idx] == format!("f{feature_dim}") {
        feature_dim += 1;
        idx += 1;
    }
    if feature_dim == 0 {
        return Err(bad_header("expected feature columns f0, f1, ...".into()));
    }
    if fields.get(idx) != Some(&"label") {
        return Err(bad_header(format!(
            "expected 'label' after {feature_dim} feature columns"
        )));
    }
    idx += 1;
    let mut spurious_col = None;
    let mut polluted_col = None;
    if fields.get(idx) == Some(&"spurious") {
        spurious_col = Some(idx);
        idx += 1;
    }
    if fields.get(idx) == Some(&"polluted") {
        polluted_col = Some(idx);
        idx += 1;
    }
    if idx != fields.len() {
        return Err(bad_header(format!(
            "unrecognized trailing column '{}'",
            fields[idx]
        )));
    }
    Ok(HeaderLayout {
        feature_dim,
        spurious_col,
        polluted_col,
        width: fields.len(),
    })
}

/// Loads a dataset CSV together with whatever audit columns it carries.
/// `num_classes` fixes the class count (labels at or above it are parse
/// errors); when `None` the count is inferred as `max(label) + 1`.
pub fn load_dataset_full(
    path: &Path,
    num_classes: Option<usize>,
) -> Result<(Dataset, GroundTruth)> {
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(std::io::BufReader::new(file));
    let layout = parse_header(
        &reader
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                msg: e.to_string(),
            })?
            .clone(),
    )?;
    let mut examples = Vec::new();
    let mut spurious = layout.spurious_col.map(|_| Vec::new());
    let mut polluted = layout.polluted_col.map(|_| Vec::new());
    for (row_idx, record) in reader.records().enumerate() {
        // Header occupies line 1; with no embedded newlines in this
        // format, data row k sits on line k + 2.
        let fallback_line = row_idx as u64 + 2;
        let record = record.map_err(|e| Error::Parse {
            line: e
                .position()
                .map(|p| p.line())
                .unwrap_or(fallback_line),
            msg: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(fallback_line);
        if record.len() != layout.width {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "expected {} fields, found {}",
                    layout.width,
                    record.len()
                ),
            });
        }
        let field = |col: usize| record.get(col).expect("width checked");
        let id: u64 = field(0).trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid id '{}'", field(0)),
        })?;
        let mut features = Vec::with_capacity(layout.feature_dim);
        for d in 0..layout.feature_dim {
            let raw = field(1 + d);
            let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid float '{raw}' in column f{d}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite value in column f{d}"),
                });
            }
            features.push(v);
        }
        let label_col = 1 + layout.feature_dim;
        let label: usize = field(label_col).trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid label '{}'", field(label_col)),
        })?;
        if let Some(c) = num_classes {
            if label >= c {
                return Err(Error::Parse {
                    line,
                    msg: format!("label {label} out of range for {c} classes"),
                });
            }
        }
        if let (Some(col), Some(vals)) = (layout.spurious_col, spurious.as_mut()) {
            let v: u8 = field(col).trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid spurious flag '{}'", field(col)),
            })?;
            if v > 1 {
                return Err(Error::Parse {
                    line,
                    msg: format!("spurious flag must be 0 or 1, got {v}"),
                });
            }
            vals.push(v);
        }
        if let (Some(col), Some(vals)) = (layout.polluted_col, polluted.as_mut()) {
            let v: u8 = field(col).trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid polluted flag '{}'", field(col)),
            })?;
            if v > 1 {
                return Err(Error::Parse {
                    line,
                    msg: format!("polluted flag must be 0 or 1, got {v}"),
                });
            }
            vals.push(v == 1);
        }
        examples.push(Example {
            id,
            features,
            label,
        });
    }
    let dataset = Dataset::new(examples, num_classes)?;
    Ok((dataset, GroundTruth { spurious, polluted }))
}

/// Loads only the id/features/label columns of a dataset CSV; audit
/// columns, if any, are ignored. This is the loader training stages use,
/// so generation-time ground truth cannot leak into them.
pub fn load_dataset(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    Ok(load_dataset_full(path, num_classes)?.0)
}
