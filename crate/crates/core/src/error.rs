use thiserror::Error;

use crate::types::Component;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeedsError {
    #[error("record {id} is missing its gold-standard label")]
    MissingLabel { id: u64 },

    #[error("no observed times to build a grid from")]
    EmptyData,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bandwidth must be positive and finite, got {0}")]
    NonpositiveBandwidth(f64),

    #[error("sample has zero spread; cannot derive a bandwidth")]
    DegenerateSample,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("t = {t}: only {effective} subjects at risk, need at least {required}")]
    InsufficientAtRisk { t: f64, effective: f64, required: f64 },

    #[error("t = {t}: kernel mass {effective:.3} below the required {required}")]
    InsufficientKernelMass { t: f64, effective: f64, required: f64 },

    #[error("t = {t}: no labeled subject at risk")]
    NoAtRisk { t: f64 },

    #[error("t = {t}: no unlabeled subject at risk")]
    NoUnlabeledAtRisk { t: f64 },

    #[error("t = {t}: solver did not converge after {iterations} iterations")]
    SolverDiverged { t: f64, iterations: usize },

    #[error("covariance matrix is singular even after ridge escalation")]
    SingularAfterRidge,

    #[error("t = {t}: every component estimate is absent")]
    AllComponentsAbsent { t: f64 },

    #[error("fold {fold}: {component:?} fit failed")]
    FoldFitFailed { fold: usize, component: Component },

    #[error("no labeled records")]
    NoLabeled,

    #[error("parse error at line {line}, column {column}: {reason}")]
    Parse {
        line: usize,
        column: String,
        reason: String,
    },

    #[error("row {row} violates {rule}")]
    InvariantViolation { row: usize, rule: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl From<std::io::Error> for SeedsError {
    fn from(e: std::io::Error) -> Self {
        SeedsError::Io(e.to_string())
    }
}

impl From<csv::Error> for SeedsError {
    fn from(e: csv::Error) -> Self {
        SeedsError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SeedsError>;
