use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::combiner::{RidgePolicy, SeedsOptions};
use crate::error::{Result, SeedsError};
use crate::imputation::BasisSpec;
use crate::kernels::{BandwidthOverrides, DEFAULT_KAPPA};
use crate::simgen::{SettingId, SettingSpec};
use crate::types::{Dataset, SubjectRecord};

/// Every option of every command. The same keys work as command-line flags
/// and in a JSON config file; flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// JSON file with any of these options
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Simulation setting: s1, s2, a1.1, a1.2, a2.1, a2.2, a3.1, a3.2
    #[arg(long)]
    pub setting: Option<String>,
    /// Labeled sample size
    #[arg(long)]
    pub n: Option<usize>,
    /// Unlabeled sample size
    #[arg(long = "N")]
    #[serde(rename = "N")]
    pub big_n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Grid as points:lo:hi, the quantile range of pooled observed times
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format for results: csv or json
    #[arg(long)]
    pub format: Option<String>,
    /// Worker threads (defaults to all cores)
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    #[arg(long)]
    pub process: Option<PathBuf>,
    /// Subgroup filter on a covariate column, e.g. Z_1==1
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub out_prefix: Option<PathBuf>,
    /// Bandwidth undersmoothing exponent, strictly between 0.2 and 0.5
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Imputation basis: auto, full or intercept
    #[arg(long)]
    pub basis: Option<String>,
    /// Ridge multiplier on n^(-1/2) * mean(diag V)
    #[arg(long)]
    pub ridge_factor: Option<f64>,
    /// Also count the sampling variance of the unlabeled averages in SEEDS
    #[arg(long)]
    pub unlabeled_variance: Option<bool>,
    /// Monte Carlo draws for the true survival curve
    #[arg(long)]
    pub mc_draws: Option<usize>,
    /// Records in the pilot dataset that fixes the study grid
    #[arg(long)]
    pub pilot_size: Option<usize>,
    #[arg(long)]
    pub h_labeled_left: Option<f64>,
    #[arg(long)]
    pub h_labeled_right: Option<f64>,
    #[arg(long)]
    pub h_unlabeled_left: Option<f64>,
    #[arg(long)]
    pub h_unlabeled_right: Option<f64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        Options { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Options {
    pub fn from_file(path: &Path) -> Result<Options> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SeedsError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| SeedsError::Config(format!("{}: {e}", path.display())))
    }

    /// `top` wins wherever it is set.
    pub fn overlay(self, top: Options) -> Options {
        let base = self;
        overlay!(
            base, top, config, setting, n, big_n, reps, grid, folds, seed, out, format, threads,
            labeled, unlabeled, process, filter, out_prefix, kappa, basis, ridge_factor, unlabeled_variance,
            mc_draws,
            pilot_size, h_labeled_left, h_labeled_right, h_unlabeled_left, h_unlabeled_right
        )
    }

    /// Command-line options layered over the config file they name, if any.
    pub fn resolve(cli: Options) -> Result<Options> {
        match &cli.config {
            Some(path) => Ok(Options::from_file(path)?.overlay(cli)),
            None => Ok(cli),
        }
    }

    fn bandwidths(&self) -> BandwidthOverrides {
        BandwidthOverrides {
            labeled_left: self.h_labeled_left,
            labeled_right: self.h_labeled_right,
            unlabeled_left: self.h_unlabeled_left,
            unlabeled_right: self.h_unlabeled_right,
        }
    }

    fn ridge(&self) -> Result<RidgePolicy> {
        let policy = RidgePolicy::Scaled {
            factor: self.ridge_factor.unwrap_or(1.0),
        };
        policy.validate().map_err(config_error)?;
        Ok(policy)
    }

    fn kappa(&self) -> Result<f64> {
        let kappa = self.kappa.unwrap_or(DEFAULT_KAPPA);
        if kappa > 0.2 && kappa < 0.5 {
            Ok(kappa)
        } else {
            Err(SeedsError::Config(format!("kappa must lie in (0.2, 0.5), got {kappa}")))
        }
    }

    fn format(&self) -> Result<OutputFormat> {
        match &self.format {
            Some(f) => f.parse(),
            None => Ok(self
                .out
                .as_deref()
                .map(OutputFormat::from_path)
                .unwrap_or(OutputFormat::Csv)),
        }
    }

    fn threads(&self) -> Result<Option<usize>> {
        match self.threads {
            Some(0) => Err(SeedsError::Config("threads must be at least 1".into())),
            t => Ok(t),
        }
    }
}

fn config_error(e: SeedsError) -> SeedsError {
    match e {
        SeedsError::InvalidParameter(s) => SeedsError::Config(s),
        other => other,
    }
}

fn required<T: Clone>(value: &Option<T>, name: &str) -> Result<T> {
    value
        .clone()
        .ok_or_else(|| SeedsError::Config(format!("missing required option '{name}'")))
}

fn existing(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path.to_path_buf())
    } else {
        Err(SeedsError::Config(format!("no such file: {}", path.display())))
    }
}

/// `points:lo:hi`, e.g. `50:0.1:0.9`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: 50,
            lo: 0.1,
            hi: 0.9,
        }
    }
}

impl FromStr for GridSpec {
    type Err = SeedsError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SeedsError::Config(format!("grid must look like 50:0.1:0.9, got '{s}'"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let points: usize = parts[0].trim().parse().map_err(|_| bad())?;
        let lo: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[2].trim().parse().map_err(|_| bad())?;
        if points < 2 || !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(bad());
        }
        Ok(GridSpec { points, lo, hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => OutputFormat::Json,
            _ => OutputFormat::Csv,
        }
    }
}

impl FromStr for OutputFormat {
    type Err = SeedsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(SeedsError::Config(format!("unknown format '{s}'"))),
        }
    }
}

/// Which basis columns the imputation models use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisChoice {
    /// Everything available, minus columns the labeled data cannot support.
    Auto,
    Full,
    InterceptOnly,
}

impl FromStr for BasisChoice {
    type Err = SeedsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(BasisChoice::Auto),
            "full" => Ok(BasisChoice::Full),
            "intercept" => Ok(BasisChoice::InterceptOnly),
            _ => Err(SeedsError::Config(format!("unknown basis '{s}'"))),
        }
    }
}

impl BasisChoice {
    pub fn resolve(self, dataset: &Dataset) -> BasisSpec {
        let (q, p1, p2) = (
            dataset.surrogate_dim(),
            dataset.baseline_dim(),
            dataset.process_dim(),
        );
        match self {
            BasisChoice::Auto => BasisSpec::for_dataset(dataset),
            BasisChoice::Full => BasisSpec::full(q, p1, p2),
            BasisChoice::InterceptOnly => BasisSpec::intercept_only(q, p1, p2),
        }
    }
}

/// Fields shared by the simulation and estimation commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub grid: GridSpec,
    pub folds: usize,
    pub kappa: f64,
    pub bandwidths: BandwidthOverrides,
    pub basis: BasisChoice,
    pub ridge: RidgePolicy,
    pub unlabeled_variance: bool,
}

impl AnalysisConfig {
    fn from_options(o: &Options) -> Result<Self> {
        let folds = o.folds.unwrap_or(10);
        if folds < 2 {
            return Err(SeedsError::Config("folds must be at least 2".into()));
        }
        Ok(AnalysisConfig {
            grid: o.grid.as_deref().map_or(Ok(GridSpec::default()), str::parse)?,
            folds,
            kappa: o.kappa()?,
            bandwidths: o.bandwidths(),
            basis: o.basis.as_deref().map_or(Ok(BasisChoice::Auto), str::parse)?,
            ridge: o.ridge()?,
            unlabeled_variance: o.unlabeled_variance.unwrap_or(false),
        })
    }

    pub fn seeds_options(&self, fold_seed: u64) -> SeedsOptions {
        SeedsOptions {
            folds: self.folds,
            fold_seed,
            ridge: self.ridge,
            unlabeled_variance: self.unlabeled_variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub setting: SettingSpec,
    pub n: usize,
    pub big_n: usize,
    pub reps: usize,
    pub seed: u64,
    pub analysis: AnalysisConfig,
    pub mc_draws: usize,
    pub pilot_size: usize,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

impl StudyConfig {
    pub fn from_options(o: &Options) -> Result<Self> {
        let setting: SettingId = required(&o.setting, "setting")?.parse()?;
        let config = StudyConfig {
            setting: SettingSpec::published(setting),
            n: o.n.unwrap_or(250),
            big_n: o.big_n.unwrap_or(5000),
            reps: o.reps.unwrap_or(500),
            seed: o.seed.unwrap_or(0),
            analysis: AnalysisConfig::from_options(o)?,
            mc_draws: o.mc_draws.unwrap_or(1_000_000),
            pilot_size: o.pilot_size.unwrap_or(100_000),
            threads: o.threads()?,
            out: o.out.clone(),
            format: o.format()?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(SeedsError::Config(m.into()));
        if self.reps == 0 {
            return fail("reps must be at least 1");
        }
        if self.n == 0 {
            return fail("n must be at least 1");
        }
        if self.analysis.folds > self.n {
            return fail("folds cannot exceed n");
        }
        if self.mc_draws < crate::simgen::MIN_MC_DRAWS {
            return fail("mc_draws must be at least 10000");
        }
        if self.pilot_size < 2 {
            return fail("pilot_size must be at least 2");
        }
        self.setting.validate().map_err(config_error)
    }
}

/// Comparison in a subgroup filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// `Z_k <op> value` on a baseline covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    /// Zero-based covariate index.
    pub column: usize,
    pub op: FilterOp,
    pub value: f64,
}

impl FromStr for Filter {
    type Err = SeedsError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SeedsError::Config(format!("filter must look like Z_1==1, got '{s}'"));
        const OPS: [(&str, FilterOp); 6] = [
            ("==", FilterOp::Eq),
            ("!=", FilterOp::Ne),
            ("<=", FilterOp::Le),
            (">=", FilterOp::Ge),
            ("<", FilterOp::Lt),
            (">", FilterOp::Gt),
        ];
        let (pos, tok, op) = OPS
            .iter()
            .filter_map(|(tok, op)| s.find(tok).map(|p| (p, *tok, *op)))
            .min_by_key(|(p, tok, _)| (*p, std::cmp::Reverse(tok.len())))
            .ok_or_else(bad)?;
        let name = s[..pos].trim();
        let value: f64 = s[pos + tok.len()..].trim().parse().map_err(|_| bad())?;
        let index: usize = name
            .strip_prefix("Z_")
            .and_then(|k| k.parse().ok())
            .filter(|&k: &usize| k >= 1)
            .ok_or_else(bad)?;
        Ok(Filter {
            column: index - 1,
            op,
            value,
        })
    }
}

impl Filter {
    pub fn keeps(&self, rec: &SubjectRecord) -> bool {
        let Some(&z) = rec.baseline.get(self.column) else {
            return false;
        };
        match self.op {
            FilterOp::Eq => z == self.value,
            FilterOp::Ne => z != self.value,
            FilterOp::Lt => z < self.value,
            FilterOp::Le => z <= self.value,
            FilterOp::Gt => z > self.value,
            FilterOp::Ge => z >= self.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub labeled: PathBuf,
    pub unlabeled: PathBuf,
    pub process: Option<PathBuf>,
    pub filter: Option<Filter>,
    pub analysis: AnalysisConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

impl EstimateConfig {
    pub fn from_options(o: &Options) -> Result<Self> {
        Ok(EstimateConfig {
            labeled: existing(&required(&o.labeled, "labeled")?)?,
            unlabeled: existing(&required(&o.unlabeled, "unlabeled")?)?,
            process: o.process.as_deref().map(existing).transpose()?,
            filter: o.filter.as_deref().map(str::parse).transpose()?,
            analysis: AnalysisConfig::from_options(o)?,
            seed: o.seed.unwrap_or(0),
            out: o.out.clone(),
            format: o.format()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub setting: SettingSpec,
    pub n: usize,
    pub big_n: usize,
    pub seed: u64,
    pub out_prefix: PathBuf,
}

impl GenConfig {
    pub fn from_options(o: &Options) -> Result<Self> {
        let setting: SettingId = required(&o.setting, "setting")?.parse()?;
        let n = o.n.unwrap_or(250);
        if n == 0 {
            return Err(SeedsError::Config("n must be at least 1".into()));
        }
        Ok(GenConfig {
            setting: SettingSpec::published(setting),
            n,
            big_n: o.big_n.unwrap_or(5000),
            seed: o.seed.unwrap_or(0),
            out_prefix: o.out_prefix.clone().unwrap_or_default(),
        })
    }
}
