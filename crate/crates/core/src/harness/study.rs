//! Replicated simulation studies and their summary metrics.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::StudyConfig;
use crate::combiner::{seeds_estimate, CombinedEstimate};
use crate::error::{Result, SeedsError};
use crate::kernels::Bandwidths;
use crate::simgen::{generate, true_survival_curve};
use crate::types::{build_time_grid, TimeGrid};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;
/// A grid point failing in more than this share of replications is unreliable.
pub const FAILURE_SHARE: f64 = 0.2;

/// Word `word` of ChaCha8 stream `stream` under the master seed. Stream 0
/// serves the study itself (grid pilot, truth); replication `r` uses `r + 1`.
pub fn derived_seed(master: u64, stream: u64, word: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.set_word_pos(2 * word as u128);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepValue {
    pub value: f64,
    pub se: f64,
}

impl RepValue {
    fn from_combined(c: &Option<CombinedEstimate>) -> Option<RepValue> {
        c.as_ref()
            .filter(|c| c.value.is_finite() && c.variance.is_finite() && c.variance >= 0.0)
            .map(|c| RepValue {
                value: c.value,
                se: c.variance.sqrt(),
            })
    }
}

/// Per-point results of one replication; `None` marks a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub rep: usize,
    pub seeds: Vec<Option<RepValue>>,
    pub csl: Vec<Option<RepValue>>,
    pub error: Option<String>,
}

/// The evaluation grid, fixed across replications: quantiles of a large
/// pilot dataset drawn with a seed derived from the master seed.
pub fn study_grid(config: &StudyConfig) -> Result<TimeGrid> {
    let pilot = generate(&config.setting, config.pilot_size, 0, derived_seed(config.seed, 0, 0))?;
    let g = config.analysis.grid;
    build_time_grid(&pilot.dataset, g.points, g.lo, g.hi)
}

pub fn study_truth(config: &StudyConfig, grid: &TimeGrid) -> Result<Vec<f64>> {
    let truth = true_survival_curve(
        &config.setting,
        &grid.points,
        config.mc_draws,
        derived_seed(config.seed, 0, 1),
    )?;
    Ok(truth.into_iter().map(|s| s.value).collect())
}

pub fn run_replication(config: &StudyConfig, grid: &TimeGrid, rep: usize) -> Replication {
    let stream = rep as u64 + 1;
    let attempt = || -> Result<Replication> {
        let data = generate(
            &config.setting,
            config.n,
            config.big_n,
            derived_seed(config.seed, stream, 0),
        )?;
        let a = &config.analysis;
        let spec = a.basis.resolve(&data.dataset);
        let bw = Bandwidths::rule_of_thumb(&data.dataset, a.kappa, &a.bandwidths)?;
        let options = a.seeds_options(derived_seed(config.seed, stream, 1));
        let points = seeds_estimate(&data.dataset, grid, &bw, &spec, &options)?;
        Ok(Replication {
            rep,
            seeds: points.iter().map(|p| RepValue::from_combined(&p.seeds)).collect(),
            csl: points.iter().map(|p| RepValue::from_combined(&p.csl)).collect(),
            error: None,
        })
    };
    attempt().unwrap_or_else(|e| Replication {
        rep,
        seeds: vec![None; grid.len()],
        csl: vec![None; grid.len()],
        error: Some(e.to_string()),
    })
}

/// Runs every replication on a pool of `config.threads` workers. Results are
/// collected by replication index, so the degree of parallelism cannot
/// change them.
pub fn run_replications(config: &StudyConfig, grid: &TimeGrid) -> Result<Vec<Replication>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = config.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| SeedsError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        (0..config.reps)
            .into_par_iter()
            .map(|rep| run_replication(config, grid, rep))
            .collect()
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub mean: Option<f64>,
    pub bias: Option<f64>,
    /// Sample standard deviation across replications; needs two successes.
    pub ese: Option<f64>,
    pub ase: Option<f64>,
    pub covp: Option<f64>,
    pub failures: usize,
}

impl MethodMetrics {
    pub fn from_values(values: &[Option<RepValue>], truth: f64) -> Self {
        let ok: Vec<RepValue> = values.iter().flatten().copied().collect();
        let failures = values.len() - ok.len();
        if ok.is_empty() {
            return MethodMetrics {
                failures,
                ..MethodMetrics::default()
            };
        }
        let m = ok.len() as f64;
        let mean = ok.iter().map(|v| v.value).sum::<f64>() / m;
        let ese = (ok.len() >= 2).then(|| {
            (ok.iter().map(|v| (v.value - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
        });
        let covered = ok
            .iter()
            .filter(|v| (v.value - truth).abs() <= Z_95 * v.se)
            .count();
        MethodMetrics {
            mean: Some(mean),
            bias: Some(mean - truth),
            ese,
            ase: Some(ok.iter().map(|v| v.se).sum::<f64>() / m),
            covp: Some(covered as f64 / m),
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub t: f64,
    pub truth: f64,
    #[serde(rename = "SEEDS")]
    pub seeds: MethodMetrics,
    #[serde(rename = "CSL")]
    pub csl: MethodMetrics,
    /// `MSE_CSL / MSE_SEEDS` over replications where both succeeded.
    pub re: Option<f64>,
    pub unreliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub setting: String,
    pub n: usize,
    pub big_n: usize,
    pub reps: usize,
    pub points: Vec<PointMetrics>,
}

impl MetricsTable {
    /// True when at least half of the grid points are unreliable.
    pub fn exceeds_failure_policy(&self) -> bool {
        let bad = self.points.iter().filter(|p| p.unreliable).count();
        !self.points.is_empty() && 2 * bad >= self.points.len()
    }
}

fn relative_efficiency(seeds: &[Option<RepValue>], csl: &[Option<RepValue>], truth: f64) -> Option<f64> {
    let (mut a, mut b, mut k) = (0.0, 0.0, 0usize);
    for (s, c) in seeds.iter().zip(csl) {
        if let (Some(s), Some(c)) = (s, c) {
            a += (s.value - truth).powi(2);
            b += (c.value - truth).powi(2);
            k += 1;
        }
    }
    (k > 0 && a > 0.0).then(|| b / a)
}

/// Reduces replications point by point, always in replication order.
pub fn summarize(
    setting: &str,
    config_sizes: (usize, usize),
    grid: &TimeGrid,
    truth: &[f64],
    reps: &[Replication],
) -> MetricsTable {
    let mut sorted: Vec<&Replication> = reps.iter().collect();
    sorted.sort_by_key(|r| r.rep);
    let limit = (FAILURE_SHARE * reps.len() as f64).floor() as usize;
    let points = grid
        .points
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let seeds: Vec<_> = sorted.iter().map(|r| r.seeds[k]).collect();
            let csl: Vec<_> = sorted.iter().map(|r| r.csl[k]).collect();
            let s = MethodMetrics::from_values(&seeds, truth[k]);
            let c = MethodMetrics::from_values(&csl, truth[k]);
            PointMetrics {
                t,
                truth: truth[k],
                re: relative_efficiency(&seeds, &csl, truth[k]),
                unreliable: s.failures > limit || c.failures > limit,
                seeds: s,
                csl: c,
            }
        })
        .collect();
    MetricsTable {
        setting: setting.to_string(),
        n: config_sizes.0,
        big_n: config_sizes.1,
        reps: reps.len(),
        points,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub grid: TimeGrid,
    pub truth: Vec<f64>,
    pub replications: Vec<Replication>,
    pub table: MetricsTable,
}

pub fn run_study(config: &StudyConfig) -> Result<StudyOutput> {
    config.validate()?;
    let grid = study_grid(config)?;
    let truth = study_truth(config, &grid)?;
    let replications = run_replications(config, &grid)?;
    let table = summarize(
        config.setting.id.name(),
        (config.n, config.big_n),
        &grid,
        &truth,
        &replications,
    );
    Ok(StudyOutput {
        grid,
        truth,
        replications,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rv(value: f64, se: f64) -> Option<RepValue> {
        Some(RepValue { value, se })
    }

    #[test]
    fn single_replication_metrics() {
        let m = MethodMetrics::from_values(&[rv(0.6, 0.1)], 0.5);
        assert!((m.bias.unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(m.ese, None);
        assert_eq!(m.covp, Some(1.0));
    }

    #[test]
    fn self_consistent_oracle_has_zero_bias() {
        let values = [rv(0.2, 0.1), rv(0.4, 0.1), None, rv(0.9, 0.01)];
        let mean = 0.5;
        let m = MethodMetrics::from_values(&values, mean);
        assert_eq!(m.bias, Some(0.0));
        assert_eq!(m.failures, 1);
        assert!((m.covp.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.ese.unwrap() - 0.13f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn relative_efficiency_is_symmetric() {
        let a = [rv(0.5, 0.1), rv(0.7, 0.1), rv(0.45, 0.1)];
        let b = [rv(0.4, 0.1), rv(0.8, 0.1), None];
        let re = relative_efficiency(&a, &b, 0.5).unwrap();
        let er = relative_efficiency(&b, &a, 0.5).unwrap();
        assert!((re * er - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeds_are_split_by_stream() {
        assert_ne!(derived_seed(7, 1, 0), derived_seed(7, 2, 0));
        assert_ne!(derived_seed(7, 1, 0), derived_seed(7, 1, 1));
        assert_eq!(derived_seed(7, 3, 1), derived_seed(7, 3, 1));
    }

    #[test]
    fn summary_ignores_replication_order() {
        let grid = TimeGrid::new(vec![1.0, 2.0]).unwrap();
        let reps: Vec<Replication> = (0..6)
            .map(|r| Replication {
                rep: r,
                seeds: vec![rv(0.5 + 0.01 * r as f64, 0.05), None],
                csl: vec![rv(0.5 - 0.02 * r as f64, 0.05), rv(0.3, 0.1)],
                error: None,
            })
            .collect();
        let a = summarize("s1", (1, 1), &grid, &[0.5, 0.3], &reps);
        let mut rev = reps.clone();
        rev.reverse();
        let b = summarize("s1", (1, 1), &grid, &[0.5, 0.3], &rev);
        assert_eq!(a, b);
        assert!(a.points[1].unreliable && !a.points[0].unreliable);
        assert_eq!(a.points[1].seeds.failures, 6);
    }
}
