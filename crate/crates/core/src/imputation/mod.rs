//! Time-specific logistic imputation models.
//!
//! Each label type gets a working model `E[outcome | basis] = g(βᵀΦ̄)` fitted
//! on labeled data at a fixed time `t`. The plain fit solves a weighted
//! logistic estimating equation. The intrinsic fit instead minimises the
//! plug-in variance of the downstream survival estimator, subject to the
//! calibration constraint that the weighted mean residual is zero.

mod basis;
mod intrinsic;
mod newton;

pub use basis::{build_basis, BasisSpec};
pub use intrinsic::{solve_intrinsic, IntrinsicProblem};
pub use newton::solve_plain;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeedsError};
use crate::kernels::{kernel_weights, scaled_kernel};
use crate::types::{CensorCode, Component, SubjectRecord};

/// Newton tolerance on the estimating-equation norm.
pub const EE_TOLERANCE: f64 = 1e-10;
/// Tolerance on the calibration constraint of intrinsic fits.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
pub const MAX_HALVINGS: usize = 30;
/// Ridge added to the Jacobian when it is ill-conditioned, and to the
/// estimating equation itself under separation.
pub const RIDGE: f64 = 1e-6;
pub const CONDITION_LIMIT: f64 = 1e10;
/// Extra effective observations required beyond the basis dimension.
pub const GUARD_MARGIN: usize = 5;

/// Logistic link `g(x) = exp(x) / (1 + exp(x))`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Which current-status label a kernel model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    /// Anchor `L`, outcome `I(T ≥ L)`.
    Left,
    /// Anchor `U`, outcome `I(T > U)`.
    Right,
}

impl Side {
    pub fn component(self) -> Component {
        match self {
            Side::Left => Component::Left,
            Side::Right => Component::Right,
        }
    }

    pub fn anchor(self, rec: &SubjectRecord) -> f64 {
        match self {
            Side::Left => rec.left,
            Side::Right => rec.right,
        }
    }

    /// The current-status outcome; `None` for unlabeled records.
    pub fn outcome(self, rec: &SubjectRecord) -> Option<bool> {
        rec.label.map(|l| match self {
            Side::Left => l.status != CensorCode::LeftCensored,
            Side::Right => l.status == CensorCode::RightCensored,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual_norm: f64,
    /// Calibration constraint value at the solution (intrinsic fits only).
    pub constraint_residual: Option<f64>,
    /// Lagrange multiplier of the calibration constraint (intrinsic fits only).
    pub multiplier: Option<f64>,
    /// Intrinsic objective at the solution (intrinsic fits only).
    pub objective: Option<f64>,
    pub ridge_used: f64,
    /// Set when the outcome was (quasi-)separated and a penalised equation was solved.
    pub separation: bool,
}

/// One model's data at a fixed time: basis rows, model weights and outcomes.
///
/// `weights` are `I(U ≥ t > L)` for the exact-label model and `K_h(anchor - t)`
/// for the kernel models. `outcomes` are empty for unlabeled data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    pub component: Component,
    pub t: f64,
    pub dim: usize,
    pub rows: Vec<f64>,
    pub weights: Vec<f64>,
    pub outcomes: Vec<f64>,
    /// Kernel bandwidth, `None` for the exact-label model.
    pub bandwidth: Option<f64>,
}

impl ModelData {
    /// Exact-label data: weight `I(U ≥ t > L)`, outcome `I(X ≥ t > L)`.
    pub fn exact(records: &[SubjectRecord], t: f64, spec: &BasisSpec) -> Result<Self> {
        let kept = spec.kept_columns();
        let dim = kept.len();
        let mut rows = Vec::with_capacity(records.len() * dim);
        let mut weights = Vec::with_capacity(records.len());
        let mut outcomes = Vec::with_capacity(records.len());
        for rec in records {
            spec.append_basis(rec, t, &kept, &mut rows)?;
            weights.push(if rec.at_risk(t) { 1.0 } else { 0.0 });
            if let Some(label) = rec.label {
                outcomes.push(if label.time >= t && t > rec.left { 1.0 } else { 0.0 });
            }
        }
        Ok(ModelData {
            component: Component::Exact,
            t,
            dim,
            rows,
            weights,
            outcomes: finish_outcomes(outcomes, records.len()),
            bandwidth: None,
        })
    }

    /// Kernel data: weight `K_h(anchor - t)`, outcome from the side's current-status label.
    pub fn kernel(
        records: &[SubjectRecord],
        t: f64,
        h: f64,
        side: Side,
        spec: &BasisSpec,
    ) -> Result<Self> {
        let kept = spec.kept_columns();
        let dim = kept.len();
        let anchors: Vec<f64> = records.iter().map(|r| side.anchor(r)).collect();
        let weights = kernel_weights(&anchors, t, h)?;
        let mut rows = Vec::with_capacity(records.len() * dim);
        let mut outcomes = Vec::with_capacity(records.len());
        for rec in records {
            spec.append_basis(rec, t, &kept, &mut rows)?;
            if let Some(y) = side.outcome(rec) {
                outcomes.push(if y { 1.0 } else { 0.0 });
            }
        }
        Ok(ModelData {
            component: side.component(),
            t,
            dim,
            rows,
            weights,
            outcomes: finish_outcomes(outcomes, records.len()),
            bandwidth: Some(h),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn linear_predictor(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(x, b)| x * b).sum()
    }

    /// Imputed risks `g(βᵀΦ̄_i)` for every row.
    pub fn imputed(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| logistic(self.linear_predictor(i, beta)))
            .collect()
    }

    /// Effective sample size: at-risk count, or kernel mass `Σ h K_h(anchor - t)`.
    pub fn effective_size(&self) -> f64 {
        let total: f64 = self.weights.iter().sum();
        match self.bandwidth {
            Some(h) => total * h,
            None => total,
        }
    }

    /// Mean model weight: `Ī(t)` or `K̄(t)` over this set.
    pub fn mean_weight(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.weights.iter().sum::<f64>() / self.len() as f64
    }

    /// Enforces the effective-sample guard `≥ d + 5`.
    pub fn check_guard(&self) -> Result<()> {
        let required = (self.dim + GUARD_MARGIN) as f64;
        let effective = self.effective_size();
        if effective >= required {
            return Ok(());
        }
        Err(match self.bandwidth {
            None => SeedsError::InsufficientAtRisk {
                t: self.t,
                effective,
                required,
            },
            Some(_) => SeedsError::InsufficientKernelMass {
                t: self.t,
                effective,
                required,
            },
        })
    }

    /// Restriction to the given row indices.
    pub fn subset(&self, idx: &[usize]) -> ModelData {
        let mut rows = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            rows.extend_from_slice(self.row(i));
        }
        ModelData {
            component: self.component,
            t: self.t,
            dim: self.dim,
            rows,
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
            outcomes: if self.outcomes.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.outcomes[i]).collect()
            },
            bandwidth: self.bandwidth,
        }
    }
}

fn finish_outcomes(outcomes: Vec<f64>, m: usize) -> Vec<f64> {
    // partially labeled input is treated as unlabeled
    if outcomes.len() == m {
        outcomes
    } else {
        Vec::new()
    }
}

fn require_labeled(data: &ModelData) -> Result<()> {
    if data.outcomes.len() != data.len() {
        return Err(SeedsError::InvalidParameter(
            "model fitting needs labeled records".into(),
        ));
    }
    Ok(())
}

/// Plain fit on prepared data, after the effective-sample guard.
pub fn fit_plain(data: &ModelData) -> Result<FitResult> {
    require_labeled(data)?;
    data.check_guard()?;
    Ok(solve_plain(data, None))
}

/// Intrinsic fit on prepared data.
///
/// `unlabeled_mean_weight` is `Ī_N(t)` for the exact model or `K̄_N(t)` for a
/// kernel model.
pub fn fit_intrinsic(
    data: &ModelData,
    unlabeled_mean_weight: f64,
    init: &FitResult,
) -> Result<FitResult> {
    require_labeled(data)?;
    if !(unlabeled_mean_weight > 0.0) {
        return Err(SeedsError::NoUnlabeledAtRisk { t: data.t });
    }
    let scale = intrinsic_scale(data, unlabeled_mean_weight);
    solve_intrinsic(&IntrinsicProblem::new(data, scale), &init.beta)
}

/// Constant in front of the intrinsic objective: `Ī_N⁻²` or `h K̄_N⁻²`.
pub fn intrinsic_scale(data: &ModelData, unlabeled_mean_weight: f64) -> f64 {
    data.bandwidth.unwrap_or(1.0) / (unlabeled_mean_weight * unlabeled_mean_weight)
}

/// Unlabeled mean of the exact-label model weight, `Ī_N(t)`.
pub fn mean_at_risk(records: &[SubjectRecord], t: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.at_risk(t)).count() as f64 / records.len() as f64
}

/// Mean kernel weight `(1/m) Σ K_h(anchor - t)`.
pub fn mean_kernel_weight(records: &[SubjectRecord], t: f64, h: f64, side: Side) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records
        .iter()
        .map(|r| scaled_kernel(side.anchor(r) - t, h))
        .sum::<f64>()
        / records.len() as f64
}

/// Fits the exact-label estimating equation at `t`.
pub fn fit_exact_label(labeled: &[SubjectRecord], t: f64, spec: &BasisSpec) -> Result<FitResult> {
    fit_plain(&ModelData::exact(labeled, t, spec)?)
}

/// Fits the kernel-weighted current-status estimating equation at `t`.
pub fn fit_kernel_label(
    labeled: &[SubjectRecord],
    t: f64,
    h: f64,
    side: Side,
    spec: &BasisSpec,
) -> Result<FitResult> {
    fit_plain(&ModelData::kernel(labeled, t, h, side, spec)?)
}

pub fn fit_intrinsic_exact(
    labeled: &[SubjectRecord],
    unlabeled: &[SubjectRecord],
    t: f64,
    spec: &BasisSpec,
    init: &FitResult,
) -> Result<FitResult> {
    let data = ModelData::exact(labeled, t, spec)?;
    fit_intrinsic(&data, mean_at_risk(unlabeled, t), init)
}

#[allow(clippy::too_many_arguments)]
pub fn fit_intrinsic_kernel(
    labeled: &[SubjectRecord],
    unlabeled: &[SubjectRecord],
    t: f64,
    h_lab: f64,
    h_unlab: f64,
    side: Side,
    spec: &BasisSpec,
    init: &FitResult,
) -> Result<FitResult> {
    let data = ModelData::kernel(labeled, t, h_lab, side, spec)?;
    let mean = mean_kernel_weight(unlabeled, t, h_unlab, side);
    fit_intrinsic(&data, mean, init)
}
