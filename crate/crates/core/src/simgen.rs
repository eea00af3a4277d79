//! Data-generating mechanisms for the simulation settings, and Monte Carlo
//! oracles for their survival functions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeedsError};
use crate::types::{CensorCode, Dataset, Label, SubjectRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SettingId {
    S1,
    S2,
    A1_1,
    A1_2,
    A2_1,
    A2_2,
    A3_1,
    A3_2,
}

impl SettingId {
    pub const ALL: [SettingId; 8] = [
        SettingId::S1,
        SettingId::S2,
        SettingId::A1_1,
        SettingId::A1_2,
        SettingId::A2_1,
        SettingId::A2_2,
        SettingId::A3_1,
        SettingId::A3_2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SettingId::S1 => "s1",
            SettingId::S2 => "s2",
            SettingId::A1_1 => "a1.1",
            SettingId::A1_2 => "a1.2",
            SettingId::A2_1 => "a2.1",
            SettingId::A2_2 => "a2.2",
            SettingId::A3_1 => "a3.1",
            SettingId::A3_2 => "a3.2",
        }
    }
}

impl fmt::Display for SettingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SettingId {
    type Err = SeedsError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        SettingId::ALL
            .into_iter()
            .find(|id| id.name() == key)
            .ok_or_else(|| SeedsError::Config(format!("unknown setting '{s}'")))
    }
}

/// Conditional law of `T` given the surrogate and covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SurvivalLaw {
    /// `S(t) = exp{-t^k exp(a T* + b Z) / c}`.
    CoxWeibull {
        exponent: f64,
        surrogate_coef: f64,
        covariate_coef: f64,
        divisor: f64,
    },
    /// `S(t) = 1 / [1 + exp{(t - μ0 - a T* - b Z) / s}]`.
    Logistic {
        location: f64,
        surrogate_coef: f64,
        covariate_coef: f64,
        scale: f64,
    },
}

impl SurvivalLaw {
    pub fn survival(&self, t: f64, surrogate: f64, covariate: f64) -> f64 {
        match *self {
            SurvivalLaw::CoxWeibull {
                exponent,
                surrogate_coef,
                covariate_coef,
                divisor,
            } => {
                if t <= 0.0 {
                    return 1.0;
                }
                let eta = surrogate_coef * surrogate + covariate_coef * covariate;
                (-t.powf(exponent) * eta.exp() / divisor).exp()
            }
            SurvivalLaw::Logistic {
                location,
                surrogate_coef,
                covariate_coef,
                scale,
            } => {
                let mu = location + surrogate_coef * surrogate + covariate_coef * covariate;
                1.0 / (1.0 + ((t - mu) / scale).exp())
            }
        }
    }

    /// The `t` with `S(t) = v`.
    pub fn inverse(&self, v: f64, surrogate: f64, covariate: f64) -> f64 {
        match *self {
            SurvivalLaw::CoxWeibull {
                exponent,
                surrogate_coef,
                covariate_coef,
                divisor,
            } => {
                let eta = surrogate_coef * surrogate + covariate_coef * covariate;
                (-divisor * v.ln() * (-eta).exp()).powf(1.0 / exponent)
            }
            SurvivalLaw::Logistic {
                location,
                surrogate_coef,
                covariate_coef,
                scale,
            } => {
                let mu = location + surrogate_coef * surrogate + covariate_coef * covariate;
                mu + scale * ((1.0 - v) / v).ln()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingSpec {
    pub id: SettingId,
    /// `T* ~ Uniform(lo, hi)`.
    pub surrogate_range: (f64, f64),
    /// `Z ~ Normal(mean, sd)`, when the setting has a baseline covariate.
    pub covariate: Option<(f64, f64)>,
    pub survival: SurvivalLaw,
    /// Process rate is `λ(T) = rate_slope · T`, when the setting has a process.
    pub rate_slope: Option<f64>,
    /// `L ~ Weibull(shape, scale)` with survival `exp{-(t/scale)^shape}`.
    pub left_shape: f64,
    pub left_scale: f64,
    /// `U = L + Uniform(0, width)`.
    pub width: f64,
}

impl SettingSpec {
    /// Checks parameters; in particular `width > 0` so that `L < U` almost surely.
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.surrogate_range;
        let mut ok = lo < hi && self.left_shape > 0.0 && self.left_scale > 0.0 && self.width > 0.0;
        if let Some((_, sd)) = self.covariate {
            ok &= sd > 0.0;
        }
        ok &= match self.survival {
            SurvivalLaw::CoxWeibull {
                exponent, divisor, ..
            } => exponent > 0.0 && divisor > 0.0,
            SurvivalLaw::Logistic { scale, .. } => scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SeedsError::InvalidParameter(format!(
                "invalid parameters for setting {}",
                self.id
            )))
        }
    }

    pub fn published(id: SettingId) -> Self {
        let cox = |exponent, surrogate_coef, covariate_coef, divisor| SurvivalLaw::CoxWeibull {
            exponent,
            surrogate_coef,
            covariate_coef,
            divisor,
        };
        let logistic = |location, surrogate_coef, covariate_coef, scale| SurvivalLaw::Logistic {
            location,
            surrogate_coef,
            covariate_coef,
            scale,
        };
        let z = Some((5.0, 1.0));
        let (surrogate_range, covariate, survival, rate_slope, left_shape, left_scale, width) =
            match id {
                SettingId::S1 => ((0.0, 0.5), z, cox(3.0, -7.6, -0.15, 0.6), Some(2.0), 1.38, 1.3, 3.3),
                SettingId::S2 => ((-1.0, 1.0), z, logistic(2.0, 0.95, 0.1, 0.33), Some(1.0), 2.1, 1.95, 3.0),
                SettingId::A1_1 => ((0.0, 2.0 / 3.0), None, cox(2.4, -5.85, 0.0, 0.3), None, 1.05, 0.72, 1.6),
                SettingId::A1_2 => ((-1.0, 1.0), None, logistic(2.0, 0.95, 0.0, 0.35), None, 2.5, 2.45, 2.25),
                SettingId::A2_1 => ((0.0, 2.0 / 3.0), z, cox(2.4, -6.5, -0.4, 0.15), None, 0.98, 1.4, 3.0),
                SettingId::A2_2 => ((-1.0, 1.0), z, logistic(2.0, 0.95, 0.1, 0.33), None, 2.1, 1.95, 3.0),
                SettingId::A3_1 => ((0.0, 2.0 / 3.0), None, cox(2.4, -6.1, 0.0, 0.3), Some(2.0), 1.04, 0.75, 1.4),
                SettingId::A3_2 => ((-1.0, 1.0), None, logistic(3.0, 1.0, 0.0, 0.35), Some(1.0), 2.5, 2.45, 2.25),
            };
        SettingSpec {
            id,
            surrogate_range,
            covariate,
            survival,
            rate_slope,
            left_shape,
            left_scale,
            width,
        }
    }

    pub fn has_process(&self) -> bool {
        self.rate_slope.is_some()
    }

    fn draw_covariates<R: Rng>(&self, rng: &mut R, normal: Option<&Normal<f64>>) -> (f64, f64) {
        let (lo, hi) = self.surrogate_range;
        let surrogate = lo + (hi - lo) * rng.random::<f64>();
        let covariate = normal.map_or(0.0, |d| d.sample(rng));
        (surrogate, covariate)
    }

    fn normal(&self) -> Option<Normal<f64>> {
        self.covariate
            .map(|(m, s)| Normal::new(m, s).expect("validated covariate law"))
    }
}

/// A generated dataset with the latent event times kept aside.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: Dataset,
    /// Latent `T` per record, labeled records first, then unlabeled.
    pub latent: Vec<f64>,
}

/// `u` in the open interval (0, 1).
fn open01<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Draws `n` labeled and `big_n` unlabeled records. Unlabeled records keep
/// their surrogates, covariates and process only.
pub fn generate(setting: &SettingSpec, n: usize, big_n: usize, seed: u64) -> Result<Generated> {
    setting.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = setting.normal();
    let mut labeled = Vec::with_capacity(n);
    let mut unlabeled = Vec::with_capacity(big_n);
    let mut latent = Vec::with_capacity(n + big_n);
    for i in 0..n + big_n {
        let (surrogate, covariate) = setting.draw_covariates(&mut rng, normal.as_ref());
        let t = setting.survival.inverse(open01(&mut rng), surrogate, covariate);
        let left = setting.left_scale * (-open01(&mut rng).ln()).powf(1.0 / setting.left_shape);
        let right = left + setting.width * open01(&mut rng);
        let mut events = Vec::new();
        if let Some(slope) = setting.rate_slope {
            let rate = slope * t;
            if rate > 0.0 {
                let mut s = left;
                loop {
                    s += -open01(&mut rng).ln() / rate;
                    if s > right {
                        break;
                    }
                    events.push(s);
                }
            }
        }
        let (x, status) = CensorCode::censor(t, left, right);
        let (xs, ss) = CensorCode::censor(surrogate, left, right);
        let record = SubjectRecord {
            id: i as u64 + 1,
            left,
            right,
            label: Some(Label { time: x, status }),
            surrogate_times: vec![xs],
            surrogate_statuses: vec![ss],
            baseline: if setting.covariate.is_some() {
                vec![covariate]
            } else {
                Vec::new()
            },
            process_events: events,
        };
        latent.push(t);
        if i < n {
            labeled.push(record);
        } else {
            unlabeled.push(SubjectRecord {
                label: None,
                ..record
            });
        }
    }
    Ok(Generated {
        dataset: Dataset::new(labeled, unlabeled, setting.has_process())?,
        latent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTruth {
    pub t: f64,
    pub value: f64,
    /// Monte Carlo standard error.
    pub se: f64,
}

/// Smallest accepted number of Monte Carlo draws.
pub const MIN_MC_DRAWS: usize = 10_000;

/// Marginal survival `E S(t | T*, Z)` at each time, by Monte Carlo over the
/// surrogate and covariate. The same draws are used for every time.
pub fn true_survival_curve(
    setting: &SettingSpec,
    times: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Vec<SurvivalTruth>> {
    setting.validate()?;
    if draws < MIN_MC_DRAWS {
        return Err(SeedsError::InvalidParameter(format!(
            "need at least {MIN_MC_DRAWS} Monte Carlo draws, got {draws}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = setting.normal();
    let mut sum = vec![0.0; times.len()];
    let mut sq = vec![0.0; times.len()];
    for _ in 0..draws {
        let (s, z) = setting.draw_covariates(&mut rng, normal.as_ref());
        for (k, &t) in times.iter().enumerate() {
            let v = setting.survival.survival(t, s, z);
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    let m = draws as f64;
    Ok(times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mean = sum[k] / m;
            let var = (sq[k] / m - mean * mean).max(0.0) * m / (m - 1.0);
            SurvivalTruth {
                t,
                value: mean,
                se: (var / m).sqrt(),
            }
        })
        .collect())
}

pub fn true_survival(setting: &SettingSpec, t: f64, draws: usize, seed: u64) -> Result<SurvivalTruth> {
    Ok(true_survival_curve(setting, &[t], draws, seed)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoringSummary {
    pub exact: f64,
    pub right: f64,
    pub left: f64,
}

/// Shares of exact, right-censored and left-censored labeled records.
pub fn censoring_summary(dataset: &Dataset) -> Result<CensoringSummary> {
    let mut counts = [0usize; 3];
    let mut total = 0usize;
    for rec in &dataset.labeled {
        if let Some(label) = rec.label {
            counts[label.status.code() as usize - 1] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(SeedsError::NoLabeled);
    }
    let m = total as f64;
    Ok(CensoringSummary {
        exact: counts[0] as f64 / m,
        right: counts[1] as f64 / m,
        left: counts[2] as f64 / m,
    })
}
