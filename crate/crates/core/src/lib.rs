//! Source-free domain adaptation with polycentric pseudo-labels.
//!
//! A source model (MLP feature extractor plus linear classifier) is adapted
//! to an unlabeled target domain by training only the extractor on
//!
//! * an information-maximization loss (confident yet diverse predictions),
//! * cross-entropy against pseudo-labels from class-balanced, multi-center
//!   clustering of target features, refreshed every epoch,
//! * a mixup consistency loss between predictions on interpolated inputs and
//!   interpolated predictions.
//!
//! See [`trainer::adapt`] for the training loop and [`pseudolabel`] for the
//! labeling pipeline.

pub mod data;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod pseudolabel;
mod textio;
pub mod trainer;

pub use data::{gen_shifted_pair, Dataset, Domain, ShiftSpec, Task};
pub use error::{Error, Result};
pub use linalg::{Matrix, Rng};
pub use losses::{LossToggles, LossValue};
pub use model::{Gradients, Model, OptState, Sgd};
pub use pseudolabel::{CentroidSet, PolycentricConfig, PseudoLabelSet, Stage};
pub use trainer::{adapt, evaluate, pretrain_source, AdaptConfig, Arch, EpochMetrics, Evaluation, PretrainConfig};
