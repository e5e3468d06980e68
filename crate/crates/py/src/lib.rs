//! Python bindings: metrics, selection, the oracle suite, run execution and
//! a small conditional flow wrapper.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use soiltdm::flows::{
    train_mle, ConditionalFlow, FlowDataset, FlowSpec, NoiseSchedule, TrainOptions,
};
use soiltdm::harness::{self, Method, Profile, RunConfig, Selection, SummaryRow};
use soiltdm::soiltdm::{select_by, Direction, KldTrace};

fn py_err(e: soiltdm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse()
        .map_err(|e: T::Err| PyValueError::new_err(e.to_string()))
}

fn matrix(rows: Vec<Vec<f64>>, width: usize) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * width);
    for r in rows {
        if r.len() != width {
            return Err(PyValueError::new_err(format!(
                "expected rows of length {width}, got {}",
                r.len()
            )));
        }
        flat.extend(r);
    }
    Array2::from_shape_vec((n, width), flat).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn row_dict<'py>(py: Python<'py>, r: &SummaryRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", &r.method)?;
    d.set_item("env", &r.env)?;
    d.set_item("K", r.k)?;
    d.set_item("seed", r.seed)?;
    d.set_item("selected_by", &r.selected_by)?;
    d.set_item("return_abs", r.return_abs)?;
    d.set_item("return_relative_to_expert", r.return_relative_to_expert)?;
    d.set_item("checkpoint", r.checkpoint)?;
    Ok(d)
}

fn rows_from_paths(paths: &[PathBuf]) -> PyResult<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(harness::read_summary(p).map_err(py_err)?);
    }
    Ok(rows)
}

/// Relative return of `ret` against the expert return.
#[pyfunction]
fn relative_return(ret: f64, expert: f64) -> f64 {
    harness::relative_return(ret, expert)
}

/// Percentile bootstrap 95% interval of the mean.
#[pyfunction]
fn bootstrap_ci(values: Vec<f64>) -> (f64, f64) {
    harness::bootstrap_ci(&values)
}

/// Spearman rank correlation with average ranks for ties.
#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    harness::spearman(&a, &b).map_err(py_err)
}

/// Index of the selected checkpoint for a raw per-epoch criterion.
#[pyfunction]
#[pyo3(signature = (raw, window = 10, minimize = true))]
fn select_checkpoint(raw: Vec<f64>, window: usize, minimize: bool) -> PyResult<usize> {
    let trace = KldTrace::from_values(raw, window).map_err(py_err)?;
    let dir = if minimize {
        Direction::Minimize
    } else {
        Direction::Maximize
    };
    select_by(&trace, dir).map_err(py_err)
}

/// Trailing-window means of a raw criterion.
#[pyfunction]
#[pyo3(signature = (raw, window = 10))]
fn windowed(raw: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    Ok(KldTrace::from_values(raw, window)
        .map_err(py_err)?
        .windowed())
}

/// `(identity, instances, worst_residual, tolerance, passed)`.
type IdentityTuple = (String, usize, f64, f64, bool);

/// Oracle identity table.
#[pyfunction]
#[pyo3(signature = (instances = 100, seed = 0))]
fn oracle_suite(py: Python<'_>, instances: usize, seed: u64) -> PyResult<Vec<IdentityTuple>> {
    let rows = py
        .detach(|| soiltdm::oracle::run_suite(instances, seed))
        .map_err(py_err)?;
    Ok(rows
        .into_iter()
        .map(|r| {
            (
                r.identity.to_string(),
                r.instances,
                r.worst_residual,
                r.tolerance,
                r.passed,
            )
        })
        .collect())
}

/// Configuration text for a profile, environment and method.
#[pyfunction]
#[pyo3(signature = (env = "lingauss", method = "soiltdm", profile = "desk"))]
fn default_config(env: &str, method: &str, profile: &str) -> PyResult<String> {
    let cfg = RunConfig::new(parse::<Profile>(profile)?, env, parse::<Method>(method)?)
        .map_err(py_err)?;
    Ok(cfg.to_text())
}

/// Runs one seed of a configuration, writes its run directory and returns
/// the summary rows.
#[pyfunction]
fn train<'py>(
    py: Python<'py>,
    config: &str,
    seed: u64,
    out: PathBuf,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = RunConfig::parse_text(config).map_err(py_err)?;
    let rows = py
        .detach(|| -> soiltdm::Result<Vec<SummaryRow>> {
            let expert = harness::prepare_expert(&cfg)?;
            let outcome = harness::execute(&cfg, &expert, seed)?;
            harness::write_run_dir(&out, &outcome)?;
            harness::read_summary(&out.join("summary.csv"))
        })
        .map_err(py_err)?;
    rows.iter().map(|r| row_dict(py, r)).collect()
}

/// Recomputes `summary.csv` of a run directory and returns its rows.
#[pyfunction]
fn emit_metrics<'py>(py: Python<'py>, run_dir: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let rows = harness::emit_metrics(&run_dir).map_err(py_err)?;
    rows.iter().map(|r| row_dict(py, r)).collect()
}

/// Reads and concatenates summary files.
#[pyfunction]
fn read_summary<'py>(py: Python<'py>, paths: Vec<PathBuf>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    rows_from_paths(&paths)?
        .iter()
        .map(|r| row_dict(py, r))
        .collect()
}

/// Per-(method, env, K, selection) means and bootstrap intervals.
#[pyfunction]
fn aggregate<'py>(py: Python<'py>, paths: Vec<PathBuf>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    harness::aggregate(&rows_from_paths(&paths)?)
        .into_iter()
        .map(|a| {
            let d = PyDict::new(py);
            d.set_item("method", a.method)?;
            d.set_item("env", a.env)?;
            d.set_item("K", a.k)?;
            d.set_item("selected_by", a.selected_by)?;
            d.set_item("n_seeds", a.n_seeds)?;
            d.set_item("mean_return_abs", a.mean_return_abs)?;
            d.set_item("mean_relative", a.mean_relative)?;
            d.set_item("ci_low", a.ci_low)?;
            d.set_item("ci_high", a.ci_high)?;
            Ok(d)
        })
        .collect()
}

/// SVG of relative return against K.
#[pyfunction]
#[pyo3(signature = (paths, selection = "own"))]
fn plot_svg(paths: Vec<PathBuf>, selection: &str) -> PyResult<String> {
    harness::plot_svg(&rows_from_paths(&paths)?, parse::<Selection>(selection)?).map_err(py_err)
}

/// Conditional RealNVP density `p(x | cond)` with the desk architecture.
#[pyclass(name = "Flow")]
struct PyFlow {
    flow: ConditionalFlow,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyFlow {
    #[new]
    #[pyo3(signature = (dim, cond_dim = 0, seed = 0, clamp = 2.0))]
    fn new(dim: usize, cond_dim: usize, seed: u64, clamp: f64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flow =
            ConditionalFlow::new(FlowSpec::desk(dim, cond_dim, clamp), &mut rng).map_err(py_err)?;
        Ok(Self { flow, rng })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.flow.dim()
    }

    #[getter]
    fn cond_dim(&self) -> usize {
        self.flow.cond_dim()
    }

    /// Maximum-likelihood training; returns the final batch NLL.
    #[pyo3(signature = (x, cond = None, steps = 1000))]
    fn fit(
        &mut self,
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        cond: Option<Vec<Vec<f64>>>,
        steps: usize,
    ) -> PyResult<f64> {
        let n = x.len();
        let xs = matrix(x, self.flow.dim())?;
        let cs = self.condition(cond, n)?;
        let data = FlowDataset::new(xs, cs).map_err(py_err)?;
        let opts = TrainOptions {
            steps,
            ..TrainOptions::default()
        };
        let Self { flow, rng } = self;
        let history = py
            .detach(|| train_mle(flow, &data, &NoiseSchedule::none(), &opts, rng))
            .map_err(py_err)?;
        Ok(history.nll.last().copied().unwrap_or(f64::NAN))
    }

    #[pyo3(signature = (x, cond = None))]
    fn log_prob(&self, x: Vec<Vec<f64>>, cond: Option<Vec<Vec<f64>>>) -> PyResult<Vec<f64>> {
        let n = x.len();
        let xs = matrix(x, self.flow.dim())?;
        let cs = self.condition(cond, n)?;
        Ok(self
            .flow
            .log_prob(xs.view(), cs.view())
            .map_err(py_err)?
            .to_vec())
    }

    #[pyo3(signature = (n, cond = None))]
    fn sample(&mut self, n: usize, cond: Option<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
        let cs = self.condition(cond, n)?;
        let s = self.flow.sample(cs.view(), &mut self.rng).map_err(py_err)?;
        Ok(s.outer_iter().map(|r| r.to_vec()).collect())
    }
}

impl PyFlow {
    fn condition(&self, cond: Option<Vec<Vec<f64>>>, n: usize) -> PyResult<Array2<f64>> {
        let c = match cond {
            Some(c) => matrix(c, self.flow.cond_dim())?,
            None if self.flow.cond_dim() == 0 => Array2::zeros((n, 0)),
            None => return Err(PyValueError::new_err("this flow needs a condition")),
        };
        if c.nrows() != n {
            return Err(PyValueError::new_err(format!(
                "expected {n} condition rows, got {}",
                c.nrows()
            )));
        }
        Ok(c)
    }
}

#[pymodule]
pub fn soiltdm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(relative_return, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_ci, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(select_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(windowed, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_suite, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(emit_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(read_summary, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(plot_svg, m)?)?;
    m.add_class::<PyFlow>()?;
    Ok(())
}
