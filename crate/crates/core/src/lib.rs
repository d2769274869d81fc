//! Maximum-likelihood training of classifiers from indirect observations.
//!
//! An indirect observation `Y` depends on the true class `Z` only through a
//! known conditional `p(Y | Z)` ([`TransitionMatrix`]). A classifier producing
//! `p(Z | x)` is trained by maximizing the likelihood of `Y` after pushing its
//! prediction through that matrix ([`objective`]). The [`fisher`] module
//! measures how much information each kind of observation carries about the
//! class distribution.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adult;
pub mod datagen;
pub mod error;
pub mod fisher;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod rng;
pub mod simplex;
pub mod transition;

pub use error::{Error, ErrorCategory, Result};
pub use fisher::{FisherReport, Identifiability};
pub use model::{accuracy, Activation, Architecture, ClassifierParams, FeatureMatrix};
pub use objective::{combined_nll, indirect_nll, CombinedObjective, LossAndGrad, WeakDataset};
pub use optimizer::{train, OptimizerConfig, OptimizerKind, Schedule, TrainOutcome};
pub use simplex::SimplexVector;
pub use transition::TransitionMatrix;

pub use nalgebra;
