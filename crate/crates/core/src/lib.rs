// SPDX-License-Identifier: Apache-2.0

//! Run-to-run variance analytics for repeated training runs.
//!
//! The input to nearly everything here is a [`RunMatrix`]: the class
//! predictions of `R` independently trained models on the same `N`
//! evaluation examples. From it the crate derives a bit-packed
//! [`CorrectnessMatrix`] and computes
//!
//! - test-set variance, the examplewise-independence prediction, and an
//!   unbiased estimate of distribution-wise variance ([`estimators`]);
//! - calibration bounds and the balanced binary-task sweep ([`estimators`]);
//! - an all-pairs scan for examples whose correctness co-varies ([`pairscan`]);
//! - Monte-Carlo draws from the independence model and the binomial baseline
//!   ([`simulate`]);
//! - split and cross-dataset accuracy correlations ([`corr`]);
//! - the posterior correlation kernel over logits ([`npck`]);
//! - synthetic worlds with closed-form ground truth used to check all of the
//!   above ([`oracle`]).
//!
//! Files are stored in the little-endian RVAR container ([`rvar`]).

pub mod cli;
pub mod corr;
pub mod error;
pub mod estimators;
pub mod model;
pub mod npck;
pub mod oracle;
pub mod pairscan;
pub mod rng;
pub mod rvar;
pub mod simulate;
pub mod svg;

pub use error::{Error, Result};
pub use model::{
    correctness_from_predictions, disagreement_rate, example_means, per_run_accuracy,
    AccuracySeries, CorrectnessMatrix, ExampleMeans, LogitTensor, RunMatrix, VarianceReport,
};
