//! Finely stratified randomized experiments.
//!
//! The crate covers the full workflow for a blocked experiment with a known
//! treatment fraction `eta`:
//!
//! - [`design`]: block units on covariates and draw treatment within blocks
//!   (plus i.i.d., complete and coarse-stratified baselines).
//! - [`moments`]: moment functions for the ATE, QTE, LATE, weighted ATE and
//!   log-odds ratio, with the matching sample-analog solvers.
//! - [`adjust`]: regression-adjusted (augmented) ATE and LATE estimators.
//! - [`variance`]: the plug-in variance estimator for finely stratified
//!   designs, normal confidence intervals and Monte Carlo variance oracles.
//!
//! Unit indices are 0-based in this API. Anything user-facing (CLI files,
//! error messages) uses 1-based unit ids.

pub mod adjust;
pub mod data;
pub mod design;
pub mod error;
pub mod moments;
pub mod rng;
pub mod stats;
pub mod variance;

pub use data::{validate, Estimate, ExperimentData, PotentialData, Rows};
pub use design::BlockPartition;
pub use error::{Error, Result};
pub use moments::MomentModel;
