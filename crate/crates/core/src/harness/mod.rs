//! Command-line plumbing: configuration, dataset files, replicated studies,
//! single-dataset analysis and result files.

pub mod config;
pub mod emit;
pub mod estimate;
pub mod io;
pub mod study;

pub use config::{
    AnalysisConfig, BasisChoice, EstimateConfig, Filter, GenConfig, GridSpec, Options,
    OutputFormat, StudyConfig,
};
pub use emit::{emit_estimates, emit_results, read_metrics_csv};
pub use estimate::{analyze, estimate_command, EstimateReport, EstimateRow};
pub use io::{load_dataset, write_dataset, DatasetFiles};
pub use study::{run_study, summarize, MetricsTable, PointMetrics, StudyOutput};
