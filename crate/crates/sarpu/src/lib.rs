//! PU learning under the selected-at-random assumption.
//!
//! Positive-unlabeled (PU) data provides labels for a subset of the positive
//! examples only. This crate trains a classifier and a propensity score
//! model jointly by expectation maximization when the labeling probability
//! depends on a known subset of the attributes, covers the
//! selected-completely-at-random special case (constant label frequency,
//! estimated or known), and ships a label-mechanism simulator plus a
//! cross-validation evaluation harness.

pub mod error;
pub mod eval;
pub mod models;
pub mod optimizer;
pub mod pu_data;
pub mod rng;
pub mod sarem;

pub use error::{Error, Result};
pub use eval::{cross_validate, MetricReport, Method, RunMetrics};
pub use models::{Classifier, PropensityModel, PropensitySelector};
pub use optimizer::{FeatureMatrix, LogisticModel, OptimizerConfig};
pub use pu_data::{Dataset, FoldPlan, LabelMechanism};
pub use sarem::{fit_multi_scar, fit_sar_em, EmConfig, EmVariant, FitResult, FittedClassifier};
