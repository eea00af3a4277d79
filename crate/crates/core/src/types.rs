//! Observation model for doubly-censored event times.
//!
//! An event time `T` is seen only inside the window `[L, U]`. The observed
//! pair is `X = max(L, min(T, U))` together with a [`CensorCode`]. Surrogate
//! outcomes are censored by the same window. Latent event times are never
//! stored on a [`SubjectRecord`].

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeedsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CensorCode {
    Exact = 1,
    RightCensored = 2,
    LeftCensored = 3,
}

impl CensorCode {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(CensorCode::Exact),
            2 => Some(CensorCode::RightCensored),
            3 => Some(CensorCode::LeftCensored),
            _ => None,
        }
    }

    /// Applies the double-censoring map to a latent time.
    ///
    /// Ties at the window edges count as observed.
    pub fn censor(latent: f64, left: f64, right: f64) -> (f64, CensorCode) {
        if latent < left {
            (left, CensorCode::LeftCensored)
        } else if latent > right {
            (right, CensorCode::RightCensored)
        } else {
            (latent, CensorCode::Exact)
        }
    }
}

/// The three label types the estimators are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    /// Exact observed time `(X, δ)`.
    Exact,
    /// Current-status label at the left censoring time `(L, I(T ≥ L))`.
    Left,
    /// Current-status label at the right censoring time `(U, I(T > U))`.
    Right,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Exact, Component::Left, Component::Right];

    pub fn index(self) -> usize {
        match self {
            Component::Exact => 0,
            Component::Left => 1,
            Component::Right => 2,
        }
    }
}

/// Gold-standard outcome, present only on labeled records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub time: f64,
    pub status: CensorCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: u64,
    pub left: f64,
    pub right: f64,
    pub label: Option<Label>,
    pub surrogate_times: Vec<f64>,
    pub surrogate_statuses: Vec<CensorCode>,
    pub baseline: Vec<f64>,
    /// Event times of the subject's counting process, sorted, inside `(L, U]`.
    pub process_events: Vec<f64>,
}

fn coherent(time: f64, status: CensorCode, left: f64, right: f64) -> bool {
    match status {
        CensorCode::Exact => left <= time && time <= right,
        CensorCode::RightCensored => time == right,
        CensorCode::LeftCensored => time == left,
    }
}

impl SubjectRecord {
    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }

    /// Checks the record invariants, returning the name of the first rule broken.
    pub fn check(&self) -> std::result::Result<(), &'static str> {
        if !(self.left.is_finite() && self.right.is_finite()) {
            return Err("finite L and U");
        }
        if self.left >= self.right {
            return Err("L<U");
        }
        if let Some(label) = self.label {
            if !coherent(label.time, label.status, self.left, self.right) {
                return Err("X/delta coherence");
            }
        }
        if self.surrogate_times.len() != self.surrogate_statuses.len() {
            return Err("surrogate arity");
        }
        for (&x, &d) in self.surrogate_times.iter().zip(&self.surrogate_statuses) {
            if !coherent(x, d, self.left, self.right) {
                return Err("surrogate coherence");
            }
        }
        if self.baseline.iter().any(|z| !z.is_finite()) {
            return Err("finite covariates");
        }
        let mut prev = f64::NEG_INFINITY;
        for &e in &self.process_events {
            if e <= self.left || e > self.right || e < prev {
                return Err("process events sorted inside (L,U]");
            }
            prev = e;
        }
        Ok(())
    }

    /// `I(U ≥ t > L)`.
    pub fn at_risk(&self, t: f64) -> bool {
        self.right >= t && t > self.left
    }

    /// Number of process events in `(L, min(max(t, L), U)]`.
    pub fn cumulative_covariate(&self, t: f64) -> f64 {
        let upper = t.max(self.left).min(self.right);
        // events are sorted and all > L
        self.process_events.partition_point(|&e| e <= upper) as f64
    }

    pub fn derive_labels(&self) -> Result<DerivedLabels> {
        let label = self.label.ok_or(SeedsError::MissingLabel { id: self.id })?;
        Ok(DerivedLabels {
            left: self.left,
            right: self.right,
            observed: label.time,
            left_outcome: label.status != CensorCode::LeftCensored,
            right_outcome: label.status == CensorCode::RightCensored,
        })
    }
}

/// The exact-time label and the two current-status labels of one subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedLabels {
    pub left: f64,
    pub right: f64,
    pub observed: f64,
    /// `I(T ≥ L)`.
    pub left_outcome: bool,
    /// `I(T > U)`.
    pub right_outcome: bool,
}

impl DerivedLabels {
    /// `I(X ≥ t > L)`.
    pub fn exact_indicator(&self, t: f64) -> bool {
        self.observed >= t && t > self.left
    }

    /// `I(U ≥ t > L)`.
    pub fn at_risk(&self, t: f64) -> bool {
        self.right >= t && t > self.left
    }

    pub fn left_label(&self) -> (f64, bool) {
        (self.left, self.left_outcome)
    }

    pub fn right_label(&self) -> (f64, bool) {
        (self.right, self.right_outcome)
    }
}

/// Labeled and unlabeled records sharing the same surrogate and covariate layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub labeled: Vec<SubjectRecord>,
    pub unlabeled: Vec<SubjectRecord>,
    /// Whether records carry a counting process (one time-dependent covariate).
    pub has_process: bool,
}

impl Dataset {
    pub fn new(
        labeled: Vec<SubjectRecord>,
        unlabeled: Vec<SubjectRecord>,
        has_process: bool,
    ) -> Result<Self> {
        let ds = Dataset {
            labeled,
            unlabeled,
            has_process,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labeled.is_empty() {
            return Err(SeedsError::NoLabeled);
        }
        let q = self.labeled[0].surrogate_times.len();
        let p1 = self.labeled[0].baseline.len();
        for (row, rec) in self.labeled.iter().chain(&self.unlabeled).enumerate() {
            let violation = |rule: &str| SeedsError::InvariantViolation {
                row: row + 1,
                rule: rule.to_string(),
            };
            rec.check().map_err(violation)?;
            if rec.surrogate_times.len() != q || rec.baseline.len() != p1 {
                return Err(violation("shared dimensions"));
            }
            let expect_label = row < self.labeled.len();
            if rec.is_labeled() != expect_label {
                return Err(violation("label presence"));
            }
            if !self.has_process && !rec.process_events.is_empty() {
                return Err(violation("process events without process"));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.labeled.len()
    }

    pub fn big_n(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn surrogate_dim(&self) -> usize {
        self.labeled.first().map_or(0, |r| r.surrogate_times.len())
    }

    pub fn baseline_dim(&self) -> usize {
        self.labeled.first().map_or(0, |r| r.baseline.len())
    }

    pub fn process_dim(&self) -> usize {
        usize::from(self.has_process)
    }

    /// Keeps the records for which `keep` holds, in both sets.
    pub fn filter<F: Fn(&SubjectRecord) -> bool>(&self, keep: F) -> Result<Dataset> {
        Dataset::new(
            self.labeled.iter().filter(|r| keep(r)).cloned().collect(),
            self.unlabeled.iter().filter(|r| keep(r)).cloned().collect(),
            self.has_process,
        )
    }

    /// Pooled observed times: every labeled `X` plus every `L` and `U`.
    pub fn pooled_times(&self) -> Vec<f64> {
        let mut times = Vec::with_capacity(self.labeled.len() * 3 + self.unlabeled.len() * 2);
        for rec in &self.labeled {
            if let Some(label) = rec.label {
                times.push(label.time);
            }
        }
        for rec in self.labeled.iter().chain(&self.unlabeled) {
            times.push(rec.left);
            times.push(rec.right);
        }
        times
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(SeedsError::InvalidParameter("empty grid".into()));
        }
        if points.iter().any(|t| !t.is_finite()) || points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SeedsError::InvalidParameter(
                "grid must be finite and strictly increasing".into(),
            ));
        }
        Ok(TimeGrid { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Empirical quantile of sorted data with the interpolation rule `k = 1 + (m - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    debug_assert!(m > 0);
    let pos = (m - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

/// Equally spaced points between two empirical quantiles of a set of times.
pub fn grid_from_times(times: &[f64], n_points: usize, lo: f64, hi: f64) -> Result<TimeGrid> {
    if n_points < 2 {
        return Err(SeedsError::InvalidParameter("grid needs at least 2 points".into()));
    }
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(SeedsError::InvalidParameter(format!(
            "quantile range must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi}]"
        )));
    }
    if times.is_empty() {
        return Err(SeedsError::EmptyData);
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let a = quantile_sorted(&sorted, lo);
    let b = quantile_sorted(&sorted, hi);
    let step = (b - a) / (n_points - 1) as f64;
    let points = (0..n_points)
        .map(|i| if i + 1 == n_points { b } else { a + step * i as f64 })
        .collect();
    TimeGrid::new(points)
}

pub fn build_time_grid(dataset: &Dataset, n_points: usize, lo: f64, hi: f64) -> Result<TimeGrid> {
    grid_from_times(&dataset.pooled_times(), n_points, lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(events: Vec<f64>) -> SubjectRecord {
        SubjectRecord {
            id: 1,
            left: 1.0,
            right: 2.0,
            label: None,
            surrogate_times: vec![],
            surrogate_statuses: vec![],
            baseline: vec![],
            process_events: events,
        }
    }

    fn labeled(x: f64, status: CensorCode) -> SubjectRecord {
        SubjectRecord {
            id: 7,
            left: 1.0,
            right: 3.0,
            label: Some(Label { time: x, status }),
            surrogate_times: vec![],
            surrogate_statuses: vec![],
            baseline: vec![],
            process_events: vec![],
        }
    }

    #[test]
    fn cumulative_covariate_clamps_to_window() {
        let rec = window(vec![1.2, 1.8]);
        assert_eq!(rec.cumulative_covariate(1.5), 1.0);
        assert_eq!(rec.cumulative_covariate(0.5), 0.0);
        // brute force: count events <= min(t, U)
        let brute = rec.process_events.iter().filter(|&&e| e <= 5.0f64.min(2.0)).count();
        assert_eq!(rec.cumulative_covariate(5.0), brute as f64);
        assert_eq!(rec.cumulative_covariate(5.0), 2.0);
    }

    #[test]
    fn derived_labels_follow_status() {
        let exact = labeled(2.0, CensorCode::Exact).derive_labels().unwrap();
        assert!(exact.exact_indicator(1.5));
        assert!(exact.at_risk(1.5));
        assert_eq!(exact.left_label(), (1.0, true));
        assert_eq!(exact.right_label(), (3.0, false));

        let left = labeled(1.0, CensorCode::LeftCensored).derive_labels().unwrap();
        assert!(!left.exact_indicator(1.5));
        assert_eq!(left.left_label(), (1.0, false));
        assert_eq!(left.right_label(), (3.0, false));

        let right = labeled(3.0, CensorCode::RightCensored).derive_labels().unwrap();
        assert!(!right.at_risk(3.5));
        assert_eq!(right.right_label(), (3.0, true));
    }

    #[test]
    fn unlabeled_record_has_no_labels() {
        let err = window(vec![]).derive_labels().unwrap_err();
        assert_eq!(err, SeedsError::MissingLabel { id: 1 });
    }

    #[test]
    fn record_checks() {
        let mut rec = labeled(2.0, CensorCode::Exact);
        assert!(rec.check().is_ok());
        rec.right = 1.0;
        assert_eq!(rec.check(), Err("L<U"));
        let mut rec = labeled(2.0, CensorCode::RightCensored);
        assert_eq!(rec.check(), Err("X/delta coherence"));
        rec.label = Some(Label {
            time: 3.0,
            status: CensorCode::RightCensored,
        });
        assert!(rec.check().is_ok());
        let rec = window(vec![1.0]);
        assert!(rec.check().is_err());
        let rec = window(vec![1.8, 1.2]);
        assert!(rec.check().is_err());
    }

    #[test]
    fn censor_map() {
        assert_eq!(CensorCode::censor(0.5, 1.0, 3.0), (1.0, CensorCode::LeftCensored));
        assert_eq!(CensorCode::censor(4.0, 1.0, 3.0), (3.0, CensorCode::RightCensored));
        assert_eq!(CensorCode::censor(2.0, 1.0, 3.0), (2.0, CensorCode::Exact));
        for code in 1..=3 {
            assert_eq!(CensorCode::from_code(code).unwrap().code(), code);
        }
        assert!(CensorCode::from_code(4).is_none());
    }

    #[test]
    fn quantile_interpolation_rule() {
        let times: Vec<f64> = (1..=100).map(f64::from).collect();
        let grid = grid_from_times(&times, 2, 0.1, 0.9).unwrap();
        assert!((grid.points[0] - 10.9).abs() < 1e-12);
        assert!((grid.points[1] - 90.1).abs() < 1e-12);
        let grid = grid_from_times(&[3.0, 1.0, 2.0, 7.5], 2, 0.0, 1.0).unwrap();
        assert_eq!(grid.points, vec![1.0, 7.5]);
    }

    #[test]
    fn grid_errors() {
        assert_eq!(grid_from_times(&[], 5, 0.1, 0.9), Err(SeedsError::EmptyData));
        assert!(grid_from_times(&[1.0, 2.0], 1, 0.1, 0.9).is_err());
        assert!(grid_from_times(&[1.0, 2.0], 3, 0.9, 0.1).is_err());
        // all times equal: no strictly increasing grid exists
        assert!(grid_from_times(&[1.0, 1.0], 3, 0.1, 0.9).is_err());
    }

    #[test]
    fn dataset_rejects_mixed_dimensions() {
        let mut a = labeled(2.0, CensorCode::Exact);
        a.baseline = vec![1.0];
        let b = labeled(2.0, CensorCode::Exact);
        let err = Dataset::new(vec![a, b], vec![], false).unwrap_err();
        assert!(matches!(err, SeedsError::InvariantViolation { row: 2, .. }));
        assert_eq!(Dataset::new(vec![], vec![], false), Err(SeedsError::NoLabeled));
    }
}
