use serde::{Deserialize, Serialize};

use crate::error::{Result, SeedsError};
use crate::types::{CensorCode, Dataset, SubjectRecord};

/// A status dummy needs at least this many labeled records in each level to
/// stay in the data-driven default basis.
pub const MIN_LEVEL_COUNT: usize = 5;

/// Layout of the regression basis `Φ̄ = (1, X*, δ* dummies, Z, Z_L^t)`.
///
/// The full layout is the intercept, the `q` surrogate times, two dummies per
/// surrogate status (`I(δ* = Right)`, `I(δ* = Left)`, Exact as reference),
/// the `p1` baseline covariates and the `p2` cumulative processes. Columns
/// listed in `excluded` (indices into the full layout) are dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub include_surrogate_times: bool,
    pub include_surrogate_status_dummies: bool,
    pub include_baseline: bool,
    pub include_cumulative_process: bool,
    pub q: usize,
    pub p1: usize,
    pub p2: usize,
    #[serde(default)]
    pub excluded: Vec<usize>,
}

impl BasisSpec {
    pub fn intercept_only(q: usize, p1: usize, p2: usize) -> Self {
        BasisSpec {
            include_surrogate_times: false,
            include_surrogate_status_dummies: false,
            include_baseline: false,
            include_cumulative_process: false,
            q,
            p1,
            p2,
            excluded: Vec::new(),
        }
    }

    /// Every component switched on, for records with the given dimensions.
    pub fn full(q: usize, p1: usize, p2: usize) -> Self {
        BasisSpec {
            include_surrogate_times: true,
            include_surrogate_status_dummies: true,
            include_baseline: true,
            include_cumulative_process: true,
            q,
            p1,
            p2,
            excluded: Vec::new(),
        }
    }

    /// Full basis minus columns the labeled data cannot support: columns that
    /// are constant over labeled records, and status dummies with fewer than
    /// [`MIN_LEVEL_COUNT`] labeled records in either level.
    pub fn for_dataset(dataset: &Dataset) -> Self {
        let mut spec = BasisSpec::full(
            dataset.surrogate_dim(),
            dataset.baseline_dim(),
            dataset.process_dim(),
        );
        spec.exclude_unsupported(&dataset.labeled);
        spec
    }

    /// Drops unsupported time-invariant columns, judged on `records`.
    pub fn exclude_unsupported(&mut self, records: &[SubjectRecord]) {
        self.excluded.clear();
        if records.is_empty() {
            return;
        }
        let width = self.full_width();
        let process_start = width - self.p2;
        let dummy_range = 1 + self.q..1 + 3 * self.q;
        // process columns depend on t and are never screened
        let full: Vec<Vec<f64>> = records.iter().map(|r| self.full_row(r, 0.0)).collect();
        for col in 1..process_start {
            let first = full[0][col];
            if full.iter().all(|row| row[col] == first) {
                self.excluded.push(col);
                continue;
            }
            if dummy_range.contains(&col) {
                let ones = full.iter().filter(|row| row[col] != 0.0).count();
                if ones < MIN_LEVEL_COUNT || records.len() - ones < MIN_LEVEL_COUNT {
                    self.excluded.push(col);
                }
            }
        }
    }

    fn full_width(&self) -> usize {
        1 + 3 * self.q + self.p1 + self.p2
    }

    fn full_row(&self, rec: &SubjectRecord, t: f64) -> Vec<f64> {
        (0..self.full_width())
            .map(|c| self.column_value(rec, c, t))
            .collect()
    }

    fn column_value(&self, rec: &SubjectRecord, col: usize, t: f64) -> f64 {
        let q = self.q;
        if col == 0 {
            1.0
        } else if col <= q {
            rec.surrogate_times[col - 1]
        } else if col <= 3 * q {
            let offset = col - 1 - q;
            let status = rec.surrogate_statuses[offset / 2];
            let hit = if offset % 2 == 0 {
                status == CensorCode::RightCensored
            } else {
                status == CensorCode::LeftCensored
            };
            f64::from(u8::from(hit))
        } else if col <= 3 * q + self.p1 {
            rec.baseline[col - 1 - 3 * q]
        } else {
            rec.cumulative_covariate(t)
        }
    }

    fn keeps(&self, col: usize) -> bool {
        if col == 0 {
            return true;
        }
        let q = self.q;
        let on = if col <= q {
            self.include_surrogate_times
        } else if col <= 3 * q {
            self.include_surrogate_status_dummies
        } else if col <= 3 * q + self.p1 {
            self.include_baseline
        } else {
            self.include_cumulative_process
        };
        on && !self.excluded.contains(&col)
    }

    /// Indices (into the full layout) of the columns in use.
    pub fn kept_columns(&self) -> Vec<usize> {
        (0..self.full_width()).filter(|&c| self.keeps(c)).collect()
    }

    fn check_record(&self, record: &SubjectRecord) -> Result<()> {
        let pairs = [
            (self.q, record.surrogate_times.len()),
            (self.q, record.surrogate_statuses.len()),
            (self.p1, record.baseline.len()),
            (1, self.p2.max(1)),
        ];
        for (expected, found) in pairs {
            if expected != found {
                return Err(SeedsError::DimensionMismatch { expected, found });
            }
        }
        Ok(())
    }

    /// Appends the basis of `record` at `t` to `out`, using precomputed kept columns.
    pub fn append_basis(
        &self,
        record: &SubjectRecord,
        t: f64,
        kept: &[usize],
        out: &mut Vec<f64>,
    ) -> Result<()> {
        self.check_record(record)?;
        out.extend(kept.iter().map(|&c| self.column_value(record, c, t)));
        Ok(())
    }

    /// Basis dimension `d`, including the intercept.
    pub fn dimension(&self) -> usize {
        self.kept_columns().len()
    }
}

/// Basis vector `Φ̄` of a record at time `t`; the first entry is always 1.
pub fn build_basis(record: &SubjectRecord, t: f64, spec: &BasisSpec) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    spec.append_basis(record, t, &spec.kept_columns(), &mut out)?;
    Ok(out)
}
