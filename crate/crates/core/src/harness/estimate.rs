//! Single-dataset analysis: SEEDS and CSL curves with confidence intervals.

use serde::{Deserialize, Serialize};

use super::config::{AnalysisConfig, EstimateConfig};
use super::io::load_dataset;
use super::study::Z_95;
use crate::combiner::{required_additional_labels, seeds_estimate, CombinedEstimate};
use crate::error::Result;
use crate::imputation::BasisSpec;
use crate::kernels::Bandwidths;
use crate::types::{build_time_grid, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub value: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    fn from_combined(c: &CombinedEstimate) -> Option<Interval> {
        if !(c.value.is_finite() && c.variance.is_finite() && c.variance >= 0.0) {
            return None;
        }
        let se = c.variance.sqrt();
        Some(Interval {
            value: c.value,
            se,
            lower: c.value - Z_95 * se,
            upper: c.value + Z_95 * se,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub t: f64,
    pub seeds: Option<Interval>,
    pub csl: Option<Interval>,
    /// `Var_CSL / Var_SEEDS` from the estimated variances.
    pub re: Option<f64>,
    /// Extra labels CSL would need to match SEEDS.
    pub nr: Option<u64>,
    /// SEEDS weights on the exact, left and right components.
    pub weights: [Option<f64>; 3],
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    pub big_n: usize,
    pub bandwidths: Bandwidths,
    pub basis: BasisSpec,
    pub rows: Vec<EstimateRow>,
}

impl EstimateReport {
    /// True when no grid point produced either curve.
    pub fn is_empty_result(&self) -> bool {
        self.rows.iter().all(|r| r.seeds.is_none() && r.csl.is_none())
    }
}

/// Runs the full pipeline on one dataset.
pub fn analyze(dataset: &Dataset, analysis: &AnalysisConfig, fold_seed: u64) -> Result<EstimateReport> {
    let g = analysis.grid;
    let grid = build_time_grid(dataset, g.points, g.lo, g.hi)?;
    let basis = analysis.basis.resolve(dataset);
    let bandwidths = Bandwidths::rule_of_thumb(dataset, analysis.kappa, &analysis.bandwidths)?;
    let points = seeds_estimate(dataset, &grid, &bandwidths, &basis, &analysis.seeds_options(fold_seed))?;
    let n = dataset.n();
    let rows = points
        .into_iter()
        .map(|p| {
            let seeds = p.seeds.as_ref().and_then(Interval::from_combined);
            let csl = p.csl.as_ref().and_then(Interval::from_combined);
            let (re, nr) = match (&seeds, &csl) {
                (Some(s), Some(c)) if s.se > 0.0 => {
                    let (vs, vc) = (s.se * s.se, c.se * c.se);
                    (Some(vc / vs), required_additional_labels(vc, vs, n).ok())
                }
                _ => (None, None),
            };
            let weights = match &p.seeds {
                Some(s) => [0, 1, 2].map(|j| s.components_used[j].then_some(s.weights[j])),
                None => [None; 3],
            };
            EstimateRow {
                t: p.t,
                seeds,
                csl,
                re,
                nr,
                weights,
                notes: p.notes,
            }
        })
        .collect();
    Ok(EstimateReport {
        n,
        big_n: dataset.big_n(),
        bandwidths,
        basis,
        rows,
    })
}

/// Loads the configured files, applies the subgroup filter, and analyzes.
pub fn estimate_command(config: &EstimateConfig) -> Result<EstimateReport> {
    let mut dataset = load_dataset(&config.labeled, &config.unlabeled, config.process.as_deref())?;
    if let Some(filter) = &config.filter {
        if filter.column >= dataset.baseline_dim() {
            return Err(crate::error::SeedsError::Config(format!(
                "filter column Z_{} does not exist",
                filter.column + 1
            )));
        }
        dataset = dataset.filter(|r| filter.keeps(r))?;
    }
    analyze(&dataset, &config.analysis, config.seed)
}
