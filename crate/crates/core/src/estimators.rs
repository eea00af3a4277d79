//! Pointwise survival estimators and their influence residuals.
//!
//! Every estimator here is a weighted mean. Its variance is carried as a
//! per-labeled-subject influence residual `ψ_i`, so that
//! `Var = (1/n²) Σ ψ_i²` and `Cov_jk = (1/n²) Σ ψ_ij ψ_ik`. All variances are
//! on the `Var(Ŝ(t))` scale.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeedsError};
use crate::imputation::{
    fit_intrinsic, fit_plain, logistic, BasisSpec, FitResult, ModelData, Side, GUARD_MARGIN,
};
use crate::kernels::Bandwidths;
use crate::types::{Component, SubjectRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    SD,
    SL,
    SU,
    D,
    L,
    U,
    SSD,
    SSL,
    SSU,
}

/// How a method uses the unlabeled data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Supervised,
    Plain,
    Intrinsic,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::SD,
        Method::SL,
        Method::SU,
        Method::D,
        Method::L,
        Method::U,
        Method::SSD,
        Method::SSL,
        Method::SSU,
    ];

    pub fn of(family: Family, component: Component) -> Method {
        Method::ALL[3 * family as usize + component.index()]
    }

    pub fn component(self) -> Component {
        Component::ALL[self as usize % 3]
    }

    pub fn family(self) -> Family {
        match self as usize / 3 {
            0 => Family::Supervised,
            1 => Family::Plain,
            _ => Family::Intrinsic,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::SD => "SD",
            Method::SL => "SL",
            Method::SU => "SU",
            Method::D => "D",
            Method::L => "L",
            Method::U => "U",
            Method::SSD => "SSD",
            Method::SSL => "SSL",
            Method::SSU => "SSU",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateFlags {
    /// The imputation fit needed a ridge on its Jacobian.
    pub ridge: bool,
    pub separation: bool,
    /// An intrinsic estimate was replaced by the plain-fit one.
    pub plain_fallback: bool,
}

impl EstimateFlags {
    pub fn from_fit(fit: &FitResult) -> Self {
        EstimateFlags {
            ridge: fit.ridge_used > 0.0,
            separation: fit.separation,
            plain_fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub t: f64,
    pub value: f64,
    pub variance: f64,
    pub method: Method,
    /// Labeled effective sample size (at-risk count or kernel mass).
    pub effective_n: f64,
    pub flags: EstimateFlags,
}

/// A point estimate with the influence residual of every labeled subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentEstimate {
    pub estimate: PointEstimate,
    pub influence: Vec<f64>,
    /// `a_j {g(βᵀΦ̄_j) - Ŝ} / mean_weight` per unlabeled subject; empty for
    /// supervised estimators.
    pub unlabeled_influence: Vec<f64>,
}

fn variance_of(influence: &[f64]) -> f64 {
    let n = influence.len() as f64;
    influence.iter().map(|p| p * p).sum::<f64>() / (n * n)
}

fn intercept_spec(records: &[SubjectRecord]) -> BasisSpec {
    match records.first() {
        Some(r) => BasisSpec::intercept_only(
            r.surrogate_times.len(),
            r.baseline.len(),
            usize::from(!r.process_events.is_empty()),
        ),
        None => BasisSpec::intercept_only(0, 0, 0),
    }
}

/// Supervised ratio estimator on prepared labeled data.
pub fn supervised_from(data: &ModelData) -> Result<ComponentEstimate> {
    if data.outcomes.len() != data.len() || data.is_empty() {
        return Err(SeedsError::NoLabeled);
    }
    let total: f64 = data.weights.iter().sum();
    let effective = data.effective_size();
    match data.bandwidth {
        None if total < 1.0 => return Err(SeedsError::NoAtRisk { t: data.t }),
        Some(_) if effective < (1 + GUARD_MARGIN) as f64 => {
            return Err(SeedsError::InsufficientKernelMass {
                t: data.t,
                effective,
                required: (1 + GUARD_MARGIN) as f64,
            })
        }
        _ => {}
    }
    let value = data
        .weights
        .iter()
        .zip(&data.outcomes)
        .map(|(w, y)| w * y)
        .sum::<f64>()
        / total;
    let mean = total / data.len() as f64;
    let influence: Vec<f64> = data
        .weights
        .iter()
        .zip(&data.outcomes)
        .map(|(w, y)| w * (y - value) / mean)
        .collect();
    Ok(ComponentEstimate {
        estimate: PointEstimate {
            t: data.t,
            value,
            variance: variance_of(&influence),
            method: Method::of(Family::Supervised, data.component),
            effective_n: effective,
            flags: EstimateFlags::default(),
        },
        influence,
        unlabeled_influence: Vec::new(),
    })
}

/// Semi-supervised estimator: the weighted mean of imputed risks over the
/// unlabeled set, with influence residuals from the labeled set normalised
/// by the unlabeled mean weight.
pub fn semisup_from(
    labeled: &ModelData,
    unlabeled: &ModelData,
    fit: &FitResult,
    intrinsic: bool,
) -> Result<ComponentEstimate> {
    if labeled.outcomes.len() != labeled.len() || labeled.is_empty() {
        return Err(SeedsError::NoLabeled);
    }
    let total: f64 = unlabeled.weights.iter().sum();
    if unlabeled.is_empty() || !(total > 0.0) {
        return Err(SeedsError::NoUnlabeledAtRisk { t: unlabeled.t });
    }
    let imputed: Vec<f64> = (0..unlabeled.len())
        .map(|i| {
            if unlabeled.weights[i] == 0.0 {
                0.0
            } else {
                logistic(unlabeled.linear_predictor(i, &fit.beta))
            }
        })
        .collect();
    let acc: f64 = unlabeled.weights.iter().zip(&imputed).map(|(w, g)| w * g).sum();
    let value = acc / total;
    let mean = total / unlabeled.len() as f64;
    let unlabeled_influence = unlabeled
        .weights
        .iter()
        .zip(&imputed)
        .map(|(w, g)| w * (g - value) / mean)
        .collect();
    let influence = residual_influence(labeled, &fit.beta, mean, 0..labeled.len());
    let family = if intrinsic {
        Family::Intrinsic
    } else {
        Family::Plain
    };
    Ok(ComponentEstimate {
        estimate: PointEstimate {
            t: labeled.t,
            value,
            variance: variance_of(&influence),
            method: Method::of(family, labeled.component),
            effective_n: labeled.effective_size(),
            flags: EstimateFlags::from_fit(fit),
        },
        influence,
        unlabeled_influence,
    })
}

/// `a_i {y_i - g(βᵀΦ̄_i)} / mean_weight` over the given labeled rows.
pub(crate) fn residual_influence(
    data: &ModelData,
    beta: &[f64],
    mean_weight: f64,
    rows: impl Iterator<Item = usize>,
) -> Vec<f64> {
    rows.map(|i| {
        let w = data.weights[i];
        if w == 0.0 {
            0.0
        } else {
            w * (data.outcomes[i] - logistic(data.linear_predictor(i, beta))) / mean_weight
        }
    })
    .collect()
}

/// `Ŝ_SD(t)`: share of at-risk subjects whose observed time reaches `t`.
pub fn supervised_exact(labeled: &[SubjectRecord], t: f64) -> Result<PointEstimate> {
    let data = ModelData::exact(labeled, t, &intercept_spec(labeled))?;
    supervised_from(&data).map(|c| c.estimate)
}

/// Nadaraya-Watson estimate of `S(t)` from one current-status label.
pub fn supervised_kernel(
    labeled: &[SubjectRecord],
    t: f64,
    h: f64,
    side: Side,
) -> Result<PointEstimate> {
    let data = ModelData::kernel(labeled, t, h, side, &intercept_spec(labeled))?;
    supervised_from(&data).map(|c| c.estimate)
}

pub fn semisup_exact(
    labeled: &[SubjectRecord],
    unlabeled: &[SubjectRecord],
    fit: &FitResult,
    t: f64,
    spec: &BasisSpec,
    intrinsic: bool,
) -> Result<PointEstimate> {
    let lab = ModelData::exact(labeled, t, spec)?;
    let unl = ModelData::exact(unlabeled, t, spec)?;
    semisup_from(&lab, &unl, fit, intrinsic).map(|c| c.estimate)
}

#[allow(clippy::too_many_arguments)]
pub fn semisup_kernel(
    labeled: &[SubjectRecord],
    unlabeled: &[SubjectRecord],
    fit: &FitResult,
    t: f64,
    h_unlab: f64,
    h_lab: f64,
    side: Side,
    spec: &BasisSpec,
    intrinsic: bool,
) -> Result<PointEstimate> {
    let lab = ModelData::kernel(labeled, t, h_lab, side, spec)?;
    let unl = ModelData::kernel(unlabeled, t, h_unlab, side, spec)?;
    semisup_from(&lab, &unl, fit, intrinsic).map(|c| c.estimate)
}

/// Model data of all three components at one time point.
#[derive(Debug, Clone)]
pub struct PreparedPoint {
    pub t: f64,
    pub labeled: [ModelData; 3],
    pub unlabeled: [ModelData; 3],
}

impl PreparedPoint {
    pub fn new(
        labeled: &[SubjectRecord],
        unlabeled: &[SubjectRecord],
        t: f64,
        bw: &Bandwidths,
        spec: &BasisSpec,
    ) -> Result<Self> {
        Ok(PreparedPoint {
            t,
            labeled: [
                ModelData::exact(labeled, t, spec)?,
                ModelData::kernel(labeled, t, bw.labeled_left, Side::Left, spec)?,
                ModelData::kernel(labeled, t, bw.labeled_right, Side::Right, spec)?,
            ],
            unlabeled: [
                ModelData::exact(unlabeled, t, spec)?,
                ModelData::kernel(unlabeled, t, bw.unlabeled_left, Side::Left, spec)?,
                ModelData::kernel(unlabeled, t, bw.unlabeled_right, Side::Right, spec)?,
            ],
        })
    }

    pub fn n(&self) -> usize {
        self.labeled[0].len()
    }
}

/// Symmetric 3×3 covariance over components; absent rows and columns are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Covariance {
    pub matrix: [[f64; 3]; 3],
    pub present: [bool; 3],
}

impl Covariance {
    /// `(1/n²) Σ_i ψ_ij ψ_ik` from full-sample influence residuals.
    pub fn from_influence(influence: [Option<&[f64]>; 3]) -> Self {
        let mut matrix = [[0.0; 3]; 3];
        let present = influence.map(|c| c.is_some());
        for j in 0..3 {
            for k in 0..=j {
                if let (Some(a), Some(b)) = (influence[j], influence[k]) {
                    let n = a.len() as f64;
                    let s = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (n * n);
                    matrix[j][k] = s;
                    matrix[k][j] = s;
                }
            }
        }
        Covariance { matrix, present }
    }
}

/// All nine estimators at one time point. Failed components are `None`
/// with the reason in `failures`.
#[derive(Debug, Clone)]
pub struct PointComponents {
    pub t: f64,
    pub supervised: [Option<ComponentEstimate>; 3],
    pub plain: [Option<ComponentEstimate>; 3],
    pub intrinsic: [Option<ComponentEstimate>; 3],
    pub plain_fits: [Option<FitResult>; 3],
    pub intrinsic_fits: [Option<FitResult>; 3],
    pub failures: Vec<(Method, SeedsError)>,
}

fn influences(set: &[Option<ComponentEstimate>; 3]) -> [Option<&[f64]>; 3] {
    [0, 1, 2].map(|j| set[j].as_ref().map(|c| c.influence.as_slice()))
}

impl PointComponents {
    pub fn supervised_covariance(&self) -> Covariance {
        Covariance::from_influence(influences(&self.supervised))
    }

    pub fn plain_covariance(&self) -> Covariance {
        Covariance::from_influence(influences(&self.plain))
    }

    pub fn semisupervised_covariance(&self) -> Covariance {
        Covariance::from_influence(influences(&self.intrinsic))
    }

    /// Components entering the combined semi-supervised estimator: the
    /// intrinsic estimate when its fit converged, else the plain one, flagged.
    pub fn seeds_components(&self) -> [Option<ComponentEstimate>; 3] {
        [0, 1, 2].map(|j| match (&self.intrinsic[j], &self.plain[j]) {
            (Some(c), _) => Some(c.clone()),
            (None, Some(p)) => {
                let mut p = p.clone();
                p.estimate.flags.plain_fallback = true;
                Some(p)
            }
            (None, None) => None,
        })
    }

    pub fn estimates(&self) -> Vec<PointEstimate> {
        self.supervised
            .iter()
            .chain(&self.plain)
            .chain(&self.intrinsic)
            .flatten()
            .map(|c| c.estimate.clone())
            .collect()
    }
}

/// Runs all nine estimators on prepared data.
pub fn estimate_prepared(point: &PreparedPoint) -> PointComponents {
    let mut out = PointComponents {
        t: point.t,
        supervised: [None, None, None],
        plain: [None, None, None],
        intrinsic: [None, None, None],
        plain_fits: [None, None, None],
        intrinsic_fits: [None, None, None],
        failures: Vec::new(),
    };
    for c in Component::ALL {
        let j = c.index();
        let lab = &point.labeled[j];
        let unl = &point.unlabeled[j];
        match supervised_from(lab) {
            Ok(e) => out.supervised[j] = Some(e),
            Err(e) => out.failures.push((Method::of(Family::Supervised, c), e)),
        }
        let plain = match fit_plain(lab) {
            Ok(f) if f.converged => f,
            Ok(f) => {
                let err = SeedsError::SolverDiverged {
                    t: point.t,
                    iterations: f.iterations,
                };
                out.failures.push((Method::of(Family::Plain, c), err.clone()));
                out.failures.push((Method::of(Family::Intrinsic, c), err));
                continue;
            }
            Err(e) => {
                out.failures.push((Method::of(Family::Plain, c), e.clone()));
                out.failures.push((Method::of(Family::Intrinsic, c), e));
                continue;
            }
        };
        match semisup_from(lab, unl, &plain, false) {
            Ok(e) => out.plain[j] = Some(e),
            Err(e) => out.failures.push((Method::of(Family::Plain, c), e)),
        }
        let intrinsic = fit_intrinsic(lab, unl.mean_weight(), &plain)
            .and_then(|f| semisup_from(lab, unl, &f, true).map(|e| (f, e)));
        match intrinsic {
            Ok((f, e)) => {
                out.intrinsic[j] = Some(e);
                out.intrinsic_fits[j] = Some(f);
            }
            Err(e) => out.failures.push((Method::of(Family::Intrinsic, c), e)),
        }
        out.plain_fits[j] = Some(plain);
    }
    out
}

/// All nine estimators at `t`, with failing components marked absent.
pub fn estimate_all(
    labeled: &[SubjectRecord],
    unlabeled: &[SubjectRecord],
    t: f64,
    bandwidths: &Bandwidths,
    spec: &BasisSpec,
) -> Result<PointComponents> {
    let point = PreparedPoint::new(labeled, unlabeled, t, bandwidths, spec)?;
    Ok(estimate_prepared(&point))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imputation::solve_plain;
    use crate::types::{CensorCode, Label};

    fn rec(id: u64, left: f64, right: f64, x: f64, status: CensorCode) -> SubjectRecord {
        SubjectRecord {
            id,
            left,
            right,
            label: Some(Label { time: x, status }),
            surrogate_times: vec![],
            surrogate_statuses: vec![],
            baseline: vec![],
            process_events: vec![],
        }
    }

    fn unlabel(r: &SubjectRecord) -> SubjectRecord {
        SubjectRecord {
            label: None,
            ..r.clone()
        }
    }

    #[test]
    fn supervised_exact_ratio() {
        let recs = vec![
            rec(1, 0.0, 5.0, 3.0, CensorCode::Exact),
            rec(2, 0.0, 5.0, 1.0, CensorCode::Exact),
            rec(3, 2.5, 5.0, 2.5, CensorCode::LeftCensored),
        ];
        let e = supervised_exact(&recs, 2.0).unwrap();
        assert_eq!(e.value, 0.5);
        assert_eq!(e.method, Method::SD);
        // ψ = I (y - 0.5) / (2/3): ±0.75 and 0
        assert!((e.variance - 2.0 * 0.75f64.powi(2) / 9.0).abs() < 1e-15);
        let all = vec![recs[0].clone(), rec(4, 0.0, 5.0, 4.0, CensorCode::Exact)];
        let e = supervised_exact(&all, 2.0).unwrap();
        assert_eq!((e.value, e.variance), (1.0, 0.0));
        assert_eq!(
            supervised_exact(&recs, 6.0),
            Err(SeedsError::NoAtRisk { t: 6.0 })
        );
    }

    #[test]
    fn supervised_kernel_ratio() {
        let mut recs: Vec<_> = (0..20)
            .map(|i| rec(i, 1.0, 3.0, 2.0, CensorCode::Exact))
            .collect();
        let e = supervised_kernel(&recs, 1.0, 0.5, Side::Left).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.method, Method::SL);
        // equidistant anchors with outcomes 1 and 0
        for (i, r) in recs.iter_mut().enumerate() {
            if i % 2 == 0 {
                *r = rec(i as u64, 0.75, 3.0, 2.0, CensorCode::Exact);
            } else {
                *r = rec(i as u64, 1.25, 3.0, 1.25, CensorCode::LeftCensored);
            }
        }
        let e = supervised_kernel(&recs, 1.0, 0.5, Side::Left).unwrap();
        assert!((e.value - 0.5).abs() < 1e-15);
        assert!(matches!(
            supervised_kernel(&recs[..3], 1.0, 0.5, Side::Left),
            Err(SeedsError::InsufficientKernelMass { .. })
        ));
    }

    #[test]
    fn zero_coefficients_impute_one_half() {
        let recs: Vec<_> = (0..10)
            .map(|i| rec(i, 0.1 * i as f64, 4.0, 3.0, CensorCode::Exact))
            .collect();
        let unl: Vec<_> = recs.iter().map(unlabel).collect();
        let spec = BasisSpec::intercept_only(0, 0, 0);
        let fit = solve_plain(&ModelData::exact(&recs, 0.5, &spec).unwrap(), None);
        let zero = FitResult {
            beta: vec![0.0],
            ..fit
        };
        let e = semisup_exact(&recs, &unl, &zero, 0.5, &spec, false).unwrap();
        assert_eq!(e.value, 0.5);
        let e = semisup_kernel(&recs, &unl, &zero, 0.5, 0.3, 0.3, Side::Left, &spec, true).unwrap();
        assert_eq!(e.value, 0.5);
        assert_eq!(e.method, Method::SSL);
    }

    #[test]
    fn covariance_of_single_record() {
        let a = [0.3];
        let b = [-2.0];
        let cov = Covariance::from_influence([Some(&a), Some(&b), None]);
        assert_eq!(cov.matrix[0][1], -0.6);
        assert_eq!(cov.matrix[1][0], -0.6);
        assert_eq!(cov.matrix[0][2], 0.0);
        assert_eq!(cov.present, [true, true, false]);
        let zero = [0.0, 0.0];
        let c = [1.0, -1.0];
        let cov = Covariance::from_influence([Some(&zero), Some(&c), Some(&c)]);
        assert_eq!(cov.matrix[0], [0.0, 0.0, 0.0]);
        assert_eq!(cov.matrix[1][2], 0.5);
    }

    #[test]
    fn method_layout() {
        for m in Method::ALL {
            assert_eq!(Method::of(m.family(), m.component()), m);
        }
        assert_eq!(Method::SSU.component(), Component::Right);
        assert_eq!(Method::L.family(), Family::Plain);
    }
}
