//! Python bindings for benfordkit.

use std::path::PathBuf;

use benfordkit::adjust;
use benfordkit::digits::{self, DigitCounts, DigitDistribution, DigitPosition};
use benfordkit::inference::{self, ContingencyTable};
use benfordkit::pipeline::StudyConfig;
use benfordkit::report::{self, ReportFormat, SweepReport, SCHEMA_VERSION};
use benfordkit::simultci;
use benfordkit::synth::{self, GrowthModel, GrowthSpec, SweepFile};
use benfordkit::Error;
use num_bigint::BigUint;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: Error) -> PyErr {
    if err.is_input_error() {
        PyValueError::new_err(err.to_string())
    } else {
        PyRuntimeError::new_err(err.to_string())
    }
}

fn position(value: &str) -> PyResult<DigitPosition> {
    value.parse().map_err(to_py)
}

/// Digit tally for one position.
#[pyclass(name = "DigitCounts", frozen, get_all)]
pub struct PyDigitCounts {
    position: String,
    counts: Vec<u64>,
    n: u64,
    skipped: u64,
}

#[pymethods]
impl PyDigitCounts {
    fn proportions(&self) -> Vec<f64> {
        let nf = self.n as f64;
        self.counts
            .iter()
            .map(|&c| if self.n == 0 { 0.0 } else { c as f64 / nf })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("DigitCounts(position={:?}, n={}, counts={:?})", self.position, self.n, self.counts)
    }
}

impl From<DigitCounts> for PyDigitCounts {
    fn from(c: DigitCounts) -> Self {
        Self {
            position: c.position.to_string(),
            counts: c.counts,
            n: c.n,
            skipped: c.skipped,
        }
    }
}

#[pyclass(name = "TestResult", frozen, get_all)]
pub struct PyTestResult {
    statistic: f64,
    p_raw: f64,
    p_asymptotic: f64,
    degrees_of_freedom: u32,
    n: u64,
    replications: u32,
    seed: u64,
}

#[pymethods]
impl PyTestResult {
    fn __repr__(&self) -> String {
        format!(
            "TestResult(statistic={}, p_raw={}, n={}, replications={})",
            self.statistic, self.p_raw, self.n, self.replications
        )
    }
}

impl From<inference::TestResult> for PyTestResult {
    fn from(t: inference::TestResult) -> Self {
        Self {
            statistic: t.statistic,
            p_raw: t.p_raw,
            p_asymptotic: t.p_asymptotic,
            degrees_of_freedom: t.degrees_of_freedom,
            n: t.n,
            replications: t.replications,
            seed: t.seed,
        }
    }
}

#[pyclass(name = "IntervalSet", frozen, get_all)]
pub struct PyIntervalSet {
    n: u64,
    proportions: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    confidence: f64,
    c_value: u64,
    gamma: f64,
}

#[pymethods]
impl PyIntervalSet {
    fn __repr__(&self) -> String {
        format!(
            "IntervalSet(n={}, confidence={}, c_value={}, gamma={})",
            self.n, self.confidence, self.c_value, self.gamma
        )
    }
}

impl From<simultci::IntervalSet> for PyIntervalSet {
    fn from(s: simultci::IntervalSet) -> Self {
        Self {
            n: s.n,
            proportions: s.proportions,
            lower: s.lower,
            upper: s.upper,
            confidence: s.confidence,
            c_value: s.c_value,
            gamma: s.gamma,
        }
    }
}

#[pyfunction]
fn benford_first(k: u8) -> PyResult<f64> {
    digits::benford_first(k).map_err(to_py)
}

#[pyfunction]
fn benford_second(k: u8) -> PyResult<f64> {
    digits::benford_second(k).map_err(to_py)
}

/// Digit at `position` ("first"/"1" or "second"/"2"); `None` when the value has one digit.
#[pyfunction]
#[pyo3(signature = (value, position = "first"))]
fn extract_digit(value: BigUint, position: &str) -> PyResult<Option<u8>> {
    digits::extract_digit(&value, self::position(position)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (values, position = "first"))]
fn tally_digits(values: Vec<BigUint>, position: &str) -> PyResult<PyDigitCounts> {
    digits::tally_digits(&values, self::position(position)?)
        .map(Into::into)
        .map_err(to_py)
}

fn benford_counts(counts: Vec<u64>, position: &str) -> PyResult<(DigitCounts, DigitDistribution)> {
    let position = self::position(position)?;
    let counts = DigitCounts::new(position, counts).map_err(to_py)?;
    Ok((counts, DigitDistribution::benford(position)))
}

/// Pearson statistic of digit counts against the Newcomb-Benford law.
#[pyfunction]
#[pyo3(signature = (counts, position = "first"))]
fn chi2_gof_statistic(counts: Vec<u64>, position: &str) -> PyResult<f64> {
    let (counts, benford) = benford_counts(counts, position)?;
    inference::chi2_gof_statistic(&counts, &benford).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (counts, position = "first", replications = 5000, seed = 0))]
fn mc_gof_test(py: Python<'_>, counts: Vec<u64>, position: &str, replications: u32, seed: u64) -> PyResult<PyTestResult> {
    let (counts, benford) = benford_counts(counts, position)?;
    py.detach(|| inference::mc_gof_test(&counts, &benford, replications, seed))
        .map(Into::into)
        .map_err(to_py)
}

/// Independence test for a table of counts given as a list of rows.
#[pyfunction]
#[pyo3(signature = (table, replications = 5000, seed = 0))]
fn mc_independence_test(py: Python<'_>, table: Vec<Vec<u64>>, replications: u32, seed: u64) -> PyResult<PyTestResult> {
    let rows = (0..table.len()).map(|i| format!("row{i}")).collect();
    let cols = (0..table.first().map_or(0, Vec::len)).map(|j| format!("col{j}")).collect();
    let table = ContingencyTable::new(rows, cols, table).map_err(to_py)?;
    py.detach(|| inference::mc_independence_test(&table, replications, seed))
        .map(Into::into)
        .map_err(to_py)
}

#[pyfunction]
fn bh_adjust(p: Vec<f64>) -> PyResult<Vec<f64>> {
    adjust::bh_adjust(&p).map_err(to_py)
}

#[pyfunction]
fn by_adjust(p: Vec<f64>) -> PyResult<Vec<f64>> {
    adjust::by_adjust(&p).map_err(to_py)
}

#[pyfunction]
fn bonferroni_level(alpha: f64, families: u32) -> PyResult<f64> {
    adjust::bonferroni_level(alpha, families).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (counts, confidence = 0.95))]
fn sison_glaz_intervals(counts: Vec<u64>, confidence: f64) -> PyResult<PyIntervalSet> {
    simultci::sison_glaz(&counts, confidence).map(Into::into).map_err(to_py)
}

/// Intervals from exact enumeration; fails when the outcome space exceeds `max_states`.
#[pyfunction]
#[pyo3(signature = (counts, confidence = 0.95, max_states = 10_000_000))]
fn exact_intervals(counts: Vec<u64>, confidence: f64, max_states: u64) -> PyResult<PyIntervalSet> {
    simultci::exact_intervals(&counts, confidence, max_states)
        .map(Into::into)
        .map_err(to_py)
}

fn growth_spec(
    model: &str,
    initial: f64,
    rate: f64,
    horizon: u32,
    capacity: Option<f64>,
    noise_sd: f64,
    seed: u64,
) -> PyResult<GrowthSpec> {
    let model = match model {
        "geometric" => GrowthModel::Geometric,
        "logistic" => GrowthModel::Logistic,
        other => return Err(PyValueError::new_err(format!("unknown growth model `{other}`"))),
    };
    Ok(GrowthSpec {
        model,
        initial,
        rate,
        capacity,
        horizon,
        noise_sd,
        seed,
    })
}

/// Synthetic cumulative series as a list of `(iso_date, value)` pairs.
#[pyfunction]
#[pyo3(signature = (model, initial, rate, horizon, capacity = None, noise_sd = 0.0, seed = 0))]
fn generate_series(
    model: &str,
    initial: f64,
    rate: f64,
    horizon: u32,
    capacity: Option<f64>,
    noise_sd: f64,
    seed: u64,
) -> PyResult<Vec<(String, BigUint)>> {
    let spec = growth_spec(model, initial, rate, horizon, capacity, noise_sd, seed)?;
    let series = synth::generate_series(&spec).map_err(to_py)?;
    Ok(series
        .points
        .into_iter()
        .map(|p| (p.date.to_string(), p.value))
        .collect())
}

/// Runs a sweep file and returns the sweep report as JSON.
#[pyfunction]
#[pyo3(signature = (spec_path, replications = None, seed = None))]
fn synth_sweep(py: Python<'_>, spec_path: PathBuf, replications: Option<u32>, seed: Option<u64>) -> PyResult<String> {
    let file = SweepFile::load(&spec_path).map_err(to_py)?;
    let replications = replications.or(file.replications).unwrap_or(5000);
    let seed = seed.or(file.seed).unwrap_or(0);
    let rows = py
        .detach(|| synth::conformance_sweep(&file.specs, file.position, replications, file.alpha, seed))
        .map_err(to_py)?;
    SweepReport {
        schema_version: SCHEMA_VERSION,
        replications,
        seed,
        alpha: file.alpha,
        rows,
    }
    .to_json()
    .map_err(to_py)
}

/// Runs a study and returns the report as JSON. When `out_dir` is given the
/// report is also written there in `format` ("json" or "csv-bundle").
#[pyfunction]
#[pyo3(signature = (config_path, inputs, replications = None, seed = None, out_dir = None, format = "json"))]
fn run_study(
    py: Python<'_>,
    config_path: PathBuf,
    inputs: Vec<PathBuf>,
    replications: Option<u32>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    format: &str,
) -> PyResult<String> {
    let mut config = StudyConfig::load(&config_path).map_err(to_py)?;
    if let Some(b) = replications {
        config.replications = b;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let format: ReportFormat = format.parse().map_err(to_py)?;
    let study = py.detach(|| report::run_study(&config, &inputs)).map_err(to_py)?;
    if let Some(dir) = out_dir {
        report::write_report(&study, &dir, format).map_err(to_py)?;
    }
    study.to_json().map_err(to_py)
}

#[pymodule]
pub fn benfordkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDigitCounts>()?;
    m.add_class::<PyTestResult>()?;
    m.add_class::<PyIntervalSet>()?;
    m.add_function(wrap_pyfunction!(benford_first, m)?)?;
    m.add_function(wrap_pyfunction!(benford_second, m)?)?;
    m.add_function(wrap_pyfunction!(extract_digit, m)?)?;
    m.add_function(wrap_pyfunction!(tally_digits, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_gof_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(mc_gof_test, m)?)?;
    m.add_function(wrap_pyfunction!(mc_independence_test, m)?)?;
    m.add_function(wrap_pyfunction!(bh_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(by_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(bonferroni_level, m)?)?;
    m.add_function(wrap_pyfunction!(sison_glaz_intervals, m)?)?;
    m.add_function(wrap_pyfunction!(exact_intervals, m)?)?;
    m.add_function(wrap_pyfunction!(generate_series, m)?)?;
    m.add_function(wrap_pyfunction!(synth_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    Ok(())
}
