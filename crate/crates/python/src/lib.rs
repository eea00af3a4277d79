//! Python bindings: thin wrappers over the command-line harness. Results come
//! back as lists of dicts, one per grid point.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use seeds_core::combiner::required_additional_labels as nr;
use seeds_core::harness::{
    estimate_command, run_study, write_dataset, EstimateConfig, Options, StudyConfig,
};
use seeds_core::simgen::{generate as draw, true_survival as truth, SettingId, SettingSpec};
use seeds_core::SeedsError;

fn to_py(e: SeedsError) -> PyErr {
    match e {
        SeedsError::Config(_) | SeedsError::InvalidParameter(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn setting(name: &str) -> PyResult<SettingSpec> {
    let id: SettingId = name.parse().map_err(to_py)?;
    Ok(SettingSpec::published(id))
}

/// Draws a dataset and writes `labeled.csv`, `unlabeled.csv` and, when the
/// setting has a process, `process.csv` under `out_prefix`.
#[pyfunction]
#[pyo3(signature = (setting_name, n=250, big_n=5000, seed=0, out_prefix="data/"))]
fn generate(
    py: Python<'_>,
    setting_name: &str,
    n: usize,
    big_n: usize,
    seed: u64,
    out_prefix: &str,
) -> PyResult<Py<PyDict>> {
    let spec = setting(setting_name)?;
    let data = draw(&spec, n, big_n, seed).map_err(to_py)?;
    let files = write_dataset(&data.dataset, &PathBuf::from(out_prefix)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("labeled", files.labeled)?;
    out.set_item("unlabeled", files.unlabeled)?;
    out.set_item("process", files.process)?;
    Ok(out.unbind())
}

#[pyfunction]
#[pyo3(signature = (labeled, unlabeled, process=None, grid="50:0.1:0.9", folds=10, seed=0, basis="auto", filter=None))]
#[allow(clippy::too_many_arguments)]
fn estimate(
    py: Python<'_>,
    labeled: PathBuf,
    unlabeled: PathBuf,
    process: Option<PathBuf>,
    grid: &str,
    folds: usize,
    seed: u64,
    basis: &str,
    filter: Option<String>,
) -> PyResult<Vec<Py<PyDict>>> {
    let options = Options {
        labeled: Some(labeled),
        unlabeled: Some(unlabeled),
        process,
        grid: Some(grid.into()),
        folds: Some(folds),
        seed: Some(seed),
        basis: Some(basis.into()),
        filter,
        ..Options::default()
    };
    let config = EstimateConfig::from_options(&options).map_err(to_py)?;
    let report = py.detach(|| estimate_command(&config)).map_err(to_py)?;
    report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("t", r.t)?;
            d.set_item("seeds", r.seeds.map(|c| c.value))?;
            d.set_item("seeds_se", r.seeds.map(|c| c.se))?;
            d.set_item("csl", r.csl.map(|c| c.value))?;
            d.set_item("csl_se", r.csl.map(|c| c.se))?;
            d.set_item("re", r.re)?;
            d.set_item("nr", r.nr)?;
            d.set_item("weights", r.weights.to_vec())?;
            d.set_item("notes", r.notes.clone())?;
            Ok(d.unbind())
        })
        .collect()
}

/// Replicated study; per-point bias, ESE, ASE and CovP for both methods.
#[pyfunction]
#[pyo3(signature = (setting_name, n=250, big_n=5000, reps=500, grid="50:0.1:0.9", folds=10, seed=0, threads=None, mc_draws=1_000_000, pilot_size=100_000))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    setting_name: &str,
    n: usize,
    big_n: usize,
    reps: usize,
    grid: &str,
    folds: usize,
    seed: u64,
    threads: Option<usize>,
    mc_draws: usize,
    pilot_size: usize,
) -> PyResult<Vec<Py<PyDict>>> {
    let options = Options {
        setting: Some(setting_name.into()),
        n: Some(n),
        big_n: Some(big_n),
        reps: Some(reps),
        grid: Some(grid.into()),
        folds: Some(folds),
        seed: Some(seed),
        threads,
        mc_draws: Some(mc_draws),
        pilot_size: Some(pilot_size),
        ..Options::default()
    };
    let config = StudyConfig::from_options(&options).map_err(to_py)?;
    let out = py.detach(|| run_study(&config)).map_err(to_py)?;
    out.table
        .points
        .iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("t", p.t)?;
            d.set_item("truth", p.truth)?;
            for (name, m) in [("seeds", &p.seeds), ("csl", &p.csl)] {
                d.set_item(format!("{name}_bias"), m.bias)?;
                d.set_item(format!("{name}_ese"), m.ese)?;
                d.set_item(format!("{name}_ase"), m.ase)?;
                d.set_item(format!("{name}_covp"), m.covp)?;
                d.set_item(format!("{name}_failures"), m.failures)?;
            }
            d.set_item("re", p.re)?;
            d.set_item("unreliable", p.unreliable)?;
            Ok(d.unbind())
        })
        .collect()
}

/// Marginal survival of a simulation setting by Monte Carlo.
#[pyfunction]
#[pyo3(signature = (setting_name, t, draws=1_000_000, seed=0))]
fn true_survival(setting_name: &str, t: f64, draws: usize, seed: u64) -> PyResult<f64> {
    Ok(truth(&setting(setting_name)?, t, draws, seed).map_err(to_py)?.value)
}

#[pyfunction]
fn required_additional_labels(var_csl: f64, var_seeds: f64, n: usize) -> PyResult<u64> {
    nr(var_csl, var_seeds, n).map_err(to_py)
}

#[pymodule]
fn seeds(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(true_survival, m)?)?;
    m.add_function(wrap_pyfunction!(required_additional_labels, m)?)?;
    Ok(())
}
