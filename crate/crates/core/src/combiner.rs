//! Optimal linear combination of the three component estimators.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeedsError};
use crate::estimators::{
    estimate_prepared, residual_influence, ComponentEstimate, Covariance, PointComponents,
    PointEstimate, PreparedPoint,
};
use crate::imputation::{fit_intrinsic, solve_plain, BasisSpec, FitResult};
use crate::kernels::Bandwidths;
use crate::types::{Component, Dataset, TimeGrid};

/// Number of ×10 ridge escalations tried before giving up.
const RIDGE_ESCALATIONS: usize = 3;

/// How the ridge `δ_n` added to the covariance before inversion is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgePolicy {
    /// `factor · n^(-1/2) · mean(diag V)`.
    Scaled { factor: f64 },
    Fixed { value: f64 },
}

impl Default for RidgePolicy {
    fn default() -> Self {
        RidgePolicy::Scaled { factor: 1.0 }
    }
}

impl RidgePolicy {
    pub fn delta(&self, n: usize, diagonal: &[f64]) -> f64 {
        match *self {
            RidgePolicy::Fixed { value } => value,
            RidgePolicy::Scaled { factor } => {
                if diagonal.is_empty() {
                    return 0.0;
                }
                let mean = diagonal.iter().sum::<f64>() / diagonal.len() as f64;
                factor * mean / (n as f64).sqrt()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            RidgePolicy::Scaled { factor } => factor,
            RidgePolicy::Fixed { value } => value,
        };
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(SeedsError::InvalidParameter(format!(
                "ridge parameter must be non-negative, got {v}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedEstimate {
    pub t: f64,
    pub value: f64,
    /// Sandwich variance of the combination.
    pub variance: f64,
    /// Weights by component; zero for unused components.
    pub weights: [f64; 3],
    /// `m̂ᵀ(V̂ + δI)m̂` for the matrix that was actually inverted.
    pub quadratic_form: f64,
    pub components_used: [bool; 3],
    /// Ridge actually used, after any escalation.
    pub ridge: f64,
    pub cv_calibrated: bool,
}

/// Sum-to-one minimiser of `mᵀ(V + δI)m`, with the ridge actually used.
///
/// If `V + δI` is not positive definite the ridge is multiplied by ten, up to
/// three times.
pub fn weights_with_ridge(v: &DMatrix<f64>, delta: f64) -> Result<(DVector<f64>, f64)> {
    let k = v.nrows();
    if k == 0 || v.ncols() != k {
        return Err(SeedsError::InvalidParameter("empty covariance".into()));
    }
    let mean_diag = v.diagonal().mean().abs();
    let mut ridge = delta;
    for attempt in 0..=RIDGE_ESCALATIONS {
        if attempt > 0 {
            ridge = if ridge > 0.0 {
                ridge * 10.0
            } else if mean_diag > 0.0 {
                1e-10 * mean_diag
            } else {
                1e-12
            };
        }
        let mut m = v.clone();
        for j in 0..k {
            m[(j, j)] += ridge;
        }
        let Some(chol) = m.cholesky() else {
            continue;
        };
        let x = chol.solve(&DVector::from_element(k, 1.0));
        let total = x.sum();
        if total.is_finite() && total.abs() > 0.0 {
            return Ok((x / total, ridge));
        }
    }
    Err(SeedsError::SingularAfterRidge)
}

/// `m̂ = (V + δI)⁻¹1 / 1ᵀ(V + δI)⁻¹1` for a 3×3 covariance.
pub fn optimal_weights(v: &[[f64; 3]; 3], delta: f64) -> Result<[f64; 3]> {
    let m = DMatrix::from_fn(3, 3, |i, j| v[i][j]);
    let (w, _) = weights_with_ridge(&m, delta)?;
    Ok([w[0], w[1], w[2]])
}

/// Held-out influence residuals of one fold; a single fold holding every
/// subject gives the plug-in quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldInfluence {
    pub rows: Vec<usize>,
    pub columns: [Option<Vec<f64>>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceFolds {
    pub folds: Vec<FoldInfluence>,
    /// Labeled sample size.
    pub n: usize,
}

impl InfluenceFolds {
    pub fn plug_in(influence: [Option<&[f64]>; 3]) -> Self {
        let n = influence.iter().flatten().map(|c| c.len()).next().unwrap_or(0);
        InfluenceFolds {
            folds: vec![FoldInfluence {
                rows: (0..n).collect(),
                columns: influence.map(|c| c.map(<[f64]>::to_vec)),
            }],
            n,
        }
    }

    /// `(1/n) · (1/K') Σ_k (1/|I_k|) Σ_{i∈I_k} ψ_ij ψ_ik`, averaging each
    /// entry over the folds where both components are available.
    pub fn covariance(&self) -> Covariance {
        let mut matrix = [[0.0; 3]; 3];
        let mut present = [false; 3];
        let n = self.n as f64;
        for j in 0..3 {
            for k in 0..=j {
                let mut sum = 0.0;
                let mut used = 0usize;
                for fold in &self.folds {
                    if let (Some(a), Some(b)) = (&fold.columns[j], &fold.columns[k]) {
                        if a.is_empty() {
                            continue;
                        }
                        let m: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                        sum += m / a.len() as f64;
                        used += 1;
                    }
                }
                if used > 0 {
                    let v = sum / used as f64 / n;
                    matrix[j][k] = v;
                    matrix[k][j] = v;
                    if j == k {
                        present[j] = true;
                    }
                }
            }
        }
        Covariance { matrix, present }
    }

    /// Sandwich variance `(1/n)(1/K') Σ_k (1/|I_k|) Σ_{i∈I_k} (Σ_j m_j ψ_ij)²`
    /// over folds where every used component is available.
    pub fn sandwich(&self, weights: &[f64; 3], used: &[bool; 3]) -> f64 {
        let mut sum = 0.0;
        let mut folds = 0usize;
        for fold in &self.folds {
            if fold.rows.is_empty()
                || (0..3).any(|j| used[j] && fold.columns[j].is_none())
            {
                continue;
            }
            let mut acc = 0.0;
            for i in 0..fold.rows.len() {
                let mut s = 0.0;
                for j in 0..3 {
                    if used[j] {
                        s += weights[j] * fold.columns[j].as_ref().unwrap()[i];
                    }
                }
                acc += s * s;
            }
            sum += acc / fold.rows.len() as f64;
            folds += 1;
        }
        if folds == 0 {
            return f64::NAN;
        }
        sum / folds as f64 / self.n as f64
    }
}

/// Combines present components with weights from the present submatrix of
/// `v`, and takes the variance from the influence residuals.
pub fn combine(
    t: f64,
    estimates: [Option<f64>; 3],
    v: &Covariance,
    ridge: &RidgePolicy,
    influence: &InfluenceFolds,
    cv_calibrated: bool,
) -> Result<CombinedEstimate> {
    let used: Vec<usize> = (0..3)
        .filter(|&j| estimates[j].is_some() && v.present[j])
        .collect();
    if used.is_empty() {
        return Err(SeedsError::AllComponentsAbsent { t });
    }
    let k = used.len();
    let sub = DMatrix::from_fn(k, k, |a, b| v.matrix[used[a]][used[b]]);
    let diagonal: Vec<f64> = sub.diagonal().iter().cloned().collect();
    let delta = ridge.delta(influence.n, &diagonal);
    let (w, delta) = weights_with_ridge(&sub, delta)?;
    let mut weights = [0.0; 3];
    let mut components_used = [false; 3];
    let mut value = 0.0;
    for (a, &j) in used.iter().enumerate() {
        weights[j] = w[a];
        components_used[j] = true;
        value += w[a] * estimates[j].unwrap();
    }
    let mut regularised = sub;
    for a in 0..k {
        regularised[(a, a)] += delta;
    }
    let quadratic_form = w.dot(&(&regularised * &w));
    Ok(CombinedEstimate {
        t,
        value,
        variance: influence.sandwich(&weights, &components_used),
        weights,
        quadratic_form,
        components_used,
        ridge: delta,
        cv_calibrated,
    })
}

/// Random partition of `0..n` into `k` blocks whose sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(SeedsError::InvalidParameter(format!(
            "need 2 <= folds <= n, got {k} folds for {n} records"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = perm[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

/// Cross-fitted covariance of the semi-supervised components.
#[derive(Debug, Clone)]
pub struct CrossFit {
    pub covariance: Covariance,
    pub influence: InfluenceFolds,
    /// Per fold and component, the fit used on the training part.
    pub fold_fits: Vec<[Option<FitResult>; 3]>,
    pub failures: Vec<SeedsError>,
    /// Folds where an intrinsic fit failed and the plain fit was used instead.
    pub plain_fallbacks: usize,
}

/// Held-out influence residuals with coefficients refitted without each fold.
///
/// `intrinsic[j]` selects the intrinsic fit for component `j`; `None`
/// skips the component.
pub fn crossfit_prepared(
    point: &PreparedPoint,
    folds: &[Vec<usize>],
    intrinsic: [Option<bool>; 3],
    start: &[Option<FitResult>; 3],
) -> CrossFit {
    let n = point.n();
    let mut fold_fits = Vec::with_capacity(folds.len());
    let mut failures = Vec::new();
    let mut plain_fallbacks = 0;
    let mut out = Vec::with_capacity(folds.len());
    let mut in_fold = vec![false; n];
    for (f, held) in folds.iter().enumerate() {
        for &i in held {
            in_fold[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
        for &i in held {
            in_fold[i] = false;
        }
        let mut fits: [Option<FitResult>; 3] = [None, None, None];
        let mut columns: [Option<Vec<f64>>; 3] = [None, None, None];
        for c in Component::ALL {
            let j = c.index();
            let Some(use_intrinsic) = intrinsic[j] else {
                continue;
            };
            let data = point.labeled[j].subset(&train);
            let unlabeled_mean = point.unlabeled[j].mean_weight();
            // the component passed the guard on the full sample; a fold fit
            // only supplies held-out residuals, so convergence is enough
            let fit = (data.effective_size() > 0.0).then_some(()).and_then(|_| {
                let plain = solve_plain(&data, start[j].as_ref().map(|s| s.beta.as_slice()));
                if !plain.converged {
                    return None;
                }
                if !use_intrinsic {
                    return Some(plain);
                }
                match fit_intrinsic(&data, unlabeled_mean, &plain) {
                    Ok(fit) => Some(fit),
                    Err(_) => {
                        plain_fallbacks += 1;
                        Some(plain)
                    }
                }
            });
            match fit {
                Some(fit) => {
                    columns[j] = Some(residual_influence(
                        &point.labeled[j],
                        &fit.beta,
                        unlabeled_mean,
                        held.iter().copied(),
                    ));
                    fits[j] = Some(fit);
                }
                None => failures.push(SeedsError::FoldFitFailed {
                    fold: f,
                    component: c,
                }),
            }
        }
        out.push(FoldInfluence {
            rows: held.clone(),
            columns,
        });
        fold_fits.push(fits);
    }
    let influence = InfluenceFolds { folds: out, n };
    CrossFit {
        covariance: influence.covariance(),
        influence,
        fold_fits,
        failures,
        plain_fallbacks,
    }
}

/// K-fold cross-fitted covariance of the intrinsic semi-supervised estimators at `t`.
pub fn crossfit_covariance(
    dataset: &Dataset,
    t: f64,
    bandwidths: &Bandwidths,
    spec: &BasisSpec,
    k: usize,
    fold_seed: u64,
) -> Result<CrossFit> {
    let point = PreparedPoint::new(&dataset.labeled, &dataset.unlabeled, t, bandwidths, spec)?;
    let folds = fold_assignment(point.n(), k, fold_seed)?;
    let comps = estimate_prepared(&point);
    let plan = [0, 1, 2].map(|j| comps.plain_fits[j].as_ref().map(|_| true));
    Ok(crossfit_prepared(&point, &folds, plan, &comps.plain_fits))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedsOptions {
    pub folds: usize,
    pub fold_seed: u64,
    pub ridge: RidgePolicy,
    /// Add the sampling variance of the unlabeled averages to the SEEDS
    /// covariance and variance. Off by default: only labeled residuals
    /// count, which is accurate when `N` dwarfs `n`.
    pub unlabeled_variance: bool,
}

impl Default for SeedsOptions {
    fn default() -> Self {
        SeedsOptions {
            folds: 10,
            fold_seed: 0,
            ridge: RidgePolicy::default(),
            unlabeled_variance: false,
        }
    }
}

/// `(1/N²) Σ_j φ_aj φ_bj` over the unlabeled influence of each component.
pub fn unlabeled_covariance(components: &[Option<ComponentEstimate>; 3]) -> Covariance {
    let mut matrix = [[0.0; 3]; 3];
    let present = components
        .each_ref()
        .map(|c| c.as_ref().is_some_and(|c| !c.unlabeled_influence.is_empty()));
    for a in 0..3 {
        for b in 0..=a {
            if !(present[a] && present[b]) {
                continue;
            }
            let (x, y) = (
                &components[a].as_ref().unwrap().unlabeled_influence,
                &components[b].as_ref().unwrap().unlabeled_influence,
            );
            let m = x.len() as f64;
            let v = x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / (m * m);
            matrix[a][b] = v;
            matrix[b][a] = v;
        }
    }
    Covariance { matrix, present }
}

/// Everything computed at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedsPoint {
    pub t: f64,
    pub seeds: Option<CombinedEstimate>,
    pub csl: Option<CombinedEstimate>,
    pub estimates: Vec<PointEstimate>,
    /// Components whose intrinsic fit failed and whose plain fit stood in.
    pub plain_fallback: [bool; 3],
    pub notes: Vec<String>,
}

/// SEEDS (cross-fitted) and CSL (plug-in) combinations at one prepared point.
pub fn seeds_point(point: &PreparedPoint, folds: &[Vec<usize>], options: &SeedsOptions) -> SeedsPoint {
    let comps: PointComponents = estimate_prepared(point);
    let mut notes: Vec<String> = comps
        .failures
        .iter()
        .map(|(m, e)| format!("{}: {e}", m.name()))
        .collect();
    let t = point.t;

    let supervised = [0, 1, 2].map(|j| comps.supervised[j].as_ref());
    let csl_influence = InfluenceFolds::plug_in(
        supervised.map(|c| c.map(|c: &ComponentEstimate| c.influence.as_slice())),
    );
    let csl = combine(
        t,
        supervised.map(|c| c.map(|c| c.estimate.value)),
        &csl_influence.covariance(),
        &options.ridge,
        &csl_influence,
        false,
    );
    let csl = match csl {
        Ok(c) => Some(c),
        Err(e) => {
            notes.push(format!("CSL: {e}"));
            None
        }
    };

    let chosen = comps.seeds_components();
    let plain_fallback = [0, 1, 2].map(|j| comps.intrinsic[j].is_none() && chosen[j].is_some());
    let plan = [0, 1, 2].map(|j| chosen[j].as_ref().map(|_| !plain_fallback[j]));
    let seeds = if chosen.iter().all(Option::is_none) {
        notes.push(format!("SEEDS: {}", SeedsError::AllComponentsAbsent { t }));
        None
    } else {
        let cv = crossfit_prepared(point, folds, plan, &comps.plain_fits);
        notes.extend(cv.failures.iter().map(|e| format!("SEEDS: {e}")));
        if cv.plain_fallbacks > 0 {
            notes.push(format!(
                "SEEDS: {} fold fits fell back to the plain equation",
                cv.plain_fallbacks
            ));
        }
        let estimates = [0, 1, 2].map(|j| chosen[j].as_ref().map(|c| c.estimate.value));
        let extra = options.unlabeled_variance.then(|| unlabeled_covariance(&chosen));
        let mut v = cv.covariance;
        if let Some(u) = &extra {
            for a in 0..3 {
                for b in 0..3 {
                    v.matrix[a][b] += u.matrix[a][b];
                }
            }
        }
        match combine(t, estimates, &v, &options.ridge, &cv.influence, true) {
            Ok(mut c) => {
                if let Some(u) = &extra {
                    let m = c.weights;
                    c.variance += (0..3)
                        .map(|a| (0..3).map(|b| m[a] * u.matrix[a][b] * m[b]).sum::<f64>())
                        .sum::<f64>();
                }
                Some(c)
            }
            Err(e) => {
                notes.push(format!("SEEDS: {e}"));
                None
            }
        }
    };
    SeedsPoint {
        t,
        seeds,
        csl,
        estimates: comps.estimates(),
        plain_fallback,
        notes,
    }
}

/// SEEDS and CSL series over a grid. Grid points are computed in parallel;
/// each point is self-contained, so results do not depend on scheduling.
pub fn seeds_estimate(
    dataset: &Dataset,
    grid: &TimeGrid,
    bandwidths: &Bandwidths,
    spec: &BasisSpec,
    options: &SeedsOptions,
) -> Result<Vec<SeedsPoint>> {
    if grid.is_empty() {
        return Err(SeedsError::InvalidParameter("empty grid".into()));
    }
    if dataset.labeled.is_empty() {
        return Err(SeedsError::NoLabeled);
    }
    options.ridge.validate()?;
    bandwidths.validate()?;
    let folds = fold_assignment(dataset.n(), options.folds, options.fold_seed)?;
    grid.points
        .par_iter()
        .map(|&t| {
            let point =
                PreparedPoint::new(&dataset.labeled, &dataset.unlabeled, t, bandwidths, spec)?;
            Ok(seeds_point(&point, &folds, options))
        })
        .collect()
}

/// Extra labels for the combined supervised estimator to match SEEDS
/// precision, assuming its variance scales like `1/n`.
pub fn required_additional_labels(var_csl: f64, var_seeds: f64, n: usize) -> Result<u64> {
    if !(var_seeds > 0.0) || !(var_csl >= 0.0) {
        return Err(SeedsError::InvalidParameter(format!(
            "variances must be positive, got {var_csl} and {var_seeds}"
        )));
    }
    let extra = (n as f64 * (var_csl / var_seeds - 1.0)).ceil();
    Ok(if extra > 0.0 { extra as u64 } else { 0 })
}
