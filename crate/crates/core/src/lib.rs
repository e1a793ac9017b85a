//! Adversarial dataset splitting and its downstream uses.
//!
//! This crate searches for a train/test partition of a labeled dataset
//! on which trained classifiers fail to generalize: a splitter network
//! proposes per-example train-membership probabilities, a freshly
//! initialized predictor is trained on each sampled train split, and
//! the splitter is optimized to widen the train-test accuracy gap while
//! keeping the split's size and label balance usable. The discovered
//! split then powers two applications:
//!
//! * **group-robust training** ([`debias`]): treat (label, split side)
//!   as groups and train a classifier that maximizes worst-group
//!   accuracy instead of average accuracy;
//! * **label-noise detection** ([`metrics::noise_report`]): examples
//!   routed to the hard-to-generalize test side flag likely mislabeled
//!   points, scored by precision/recall against an audit column.
//!
//! Everything is deterministic given a root seed, f64 end to end, and
//! free of external model dependencies: the small feedforward networks,
//! their training loops, and the split search are all implemented here.
//!
//! # Quick start
//!
//! ```
//! use adversplit_core::datagen::{gen_spurious, SpuriousSpec};
//! use adversplit_core::engine::{run_ls, LsConfig};
//!
//! let spec = SpuriousSpec { n: 200, ..SpuriousSpec::default() };
//! let (dataset, _truth) = gen_spurious(&spec).unwrap();
//! let config = LsConfig {
//!     max_outer_iters: 2,
//!     predictor_max_epochs: 5,
//!     inner_max_epochs: 5,
//!     predictor_hidden: vec![8],
//!     splitter_hidden: vec![8],
//!     ..LsConfig::default()
//! };
//! let (split, traces) = run_ls(&dataset, &config).unwrap();
//! assert_eq!(split.assignment.len(), dataset.len());
//! assert_eq!(traces.len(), 2);
//! ```

pub mod dataset;
pub mod datagen;
pub mod debias;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod nn;

pub use dataset::{Dataset, Example};
pub use engine::{run_ls, IterationTrace, LsConfig, SplitState};
pub use error::{Error, Result};
