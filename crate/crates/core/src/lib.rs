//! Semi-supervised estimation of a survival function from doubly-censored
//! data with surrogate outcomes.
//!
//! A small labeled set carries the gold-standard `(X, δ)`; a large unlabeled
//! set carries only surrogates and covariates. Three label types (exact
//! time, left current status, right current status) each feed a
//! time-specific logistic imputation model whose imputed risks are averaged
//! over the unlabeled set. The three resulting estimators are combined with
//! inverse-covariance weights, and the covariance is calibrated by
//! cross-fitting.

pub mod combiner;
pub mod error;
pub mod harness;
pub mod estimators;
pub mod imputation;
pub mod kernels;
pub mod simgen;
pub mod types;

pub use error::{Result, SeedsError};
