//! Python bindings: train a mixture model on complete days, predict the rest
//! of a partially observed day, and move models through their JSON artifact.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use trajmix::cli::artifact::ModelArtifact;
use trajmix::clustering::{select_num_clusters, SelectKOptions};
use trajmix::numerics::{SampledCurve, TimeGrid};
use trajmix::pipeline::{train, ClusterCount, PipelineConfig};
use trajmix::predict::{Mode, Predictor, Span};
use trajmix::simulate::{default_config, generate_dataset as generate};
use trajmix::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn grid_from(points: Option<Vec<f64>>) -> PyResult<TimeGrid> {
    match points {
        Some(p) => TimeGrid::new(p).map_err(py_err),
        None => Ok(TimeGrid::daily()),
    }
}

fn curves_from(grid: &TimeGrid, rows: Vec<Vec<f64>>) -> PyResult<Vec<SampledCurve>> {
    rows.into_iter()
        .enumerate()
        .map(|(i, values)| SampledCurve::new(grid.clone(), values, format!("day{}", i + 1)).map_err(py_err))
        .collect()
}

fn span_from(hours: Option<f64>) -> Span {
    hours.map_or(Span::Full, Span::Hours)
}

/// A fitted mixture model together with the configuration and training
/// days it came from.
#[pyclass(module = "pytrajmix", frozen)]
struct Model {
    artifact: ModelArtifact,
}

#[pymethods]
impl Model {
    /// Fits a model to complete days sampled on `grid` (the daily 96-point
    /// grid by default). `k = None` picks the number of clusters by testing.
    /// `omegas` lists observed-window lengths in hours to fit besides the
    /// whole observed segment.
    #[staticmethod]
    #[pyo3(signature = (curves, grid = None, k = None, omegas = vec![], seed = 0))]
    fn train(
        py: Python<'_>,
        curves: Vec<Vec<f64>>,
        grid: Option<Vec<f64>>,
        k: Option<usize>,
        omegas: Vec<f64>,
        seed: u64,
    ) -> PyResult<Self> {
        let grid = grid_from(grid)?;
        let curves = curves_from(&grid, curves)?;
        let mut config = PipelineConfig {
            num_clusters: k.map_or(ClusterCount::Auto, ClusterCount::Fixed),
            seed,
            ..PipelineConfig::default()
        };
        config.mixture.omegas.extend(omegas.into_iter().map(Span::Hours));
        let artifact = py
            .detach(|| train(&curves, &config, seed).map(|outcome| ModelArtifact::new(&curves, outcome, config.clone(), seed)))
            .map_err(py_err)?;
        Ok(Self { artifact })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ModelArtifact::from_json(text).map(|artifact| Self { artifact }).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.artifact.to_json().map_err(py_err)
    }

    #[getter]
    fn num_clusters(&self) -> usize {
        self.artifact.mixture.num_clusters()
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.artifact.mixture.grid().points().to_vec()
    }

    /// 0-based cluster of each training day.
    #[getter]
    fn assignments(&self) -> Vec<usize> {
        self.artifact.training.iter().map(|t| t.cluster).collect()
    }

    /// Predicts the day from `tau` onwards. `observed` holds the readings
    /// from the start of the grid through at least `tau`; `omega` limits the
    /// observed window to the last `omega` hours.
    #[pyo3(signature = (observed, tau, mode = "soft", omega = None))]
    fn predict<'py>(&self, py: Python<'py>, observed: Vec<f64>, tau: f64, mode: &str, omega: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
        let mode: Mode = mode.parse().map_err(py_err)?;
        let mixture = &self.artifact.mixture;
        let grid = mixture.grid();
        if observed.is_empty() || observed.len() > grid.len() {
            return Err(PyValueError::new_err(format!("expected 1 to {} readings, got {}", grid.len(), observed.len())));
        }
        let curve = grid
            .slice(0..observed.len())
            .and_then(|g| SampledCurve::new(g, observed, "observed"))
            .map_err(py_err)?;
        let pred = Predictor::new(mixture, span_from(omega))
            .and_then(|p| p.predict(&curve, tau, mode))
            .map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("tau", pred.tau)?;
        out.set_item("t", pred.future_grid.points().to_vec())?;
        out.set_item("mixture", pred.mixture_curve.values)?;
        let clusters: Vec<Vec<f64>> = pred.per_cluster_curves.into_iter().map(|c| c.values).collect();
        out.set_item("clusters", clusters)?;
        out.set_item("posterior", pred.posterior)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!("Model(num_clusters={}, grid_points={})", self.num_clusters(), self.artifact.mixture.grid().len())
    }
}

/// Draws the built-in three-regime simulated data set. Returns a dict with
/// the grid, training and test curves and their true clusters.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn generate_dataset(py: Python<'_>, seed: u64) -> PyResult<Bound<'_, PyDict>> {
    let config = default_config();
    let data = generate(&config, seed).map_err(py_err)?;
    let values = |c: Vec<SampledCurve>| -> Vec<Vec<f64>> { c.into_iter().map(|c| c.values).collect() };
    let out = PyDict::new(py);
    out.set_item("grid", config.grid.points().to_vec())?;
    out.set_item("train", values(data.train))?;
    out.set_item("train_labels", data.train_labels)?;
    out.set_item("test", values(data.test))?;
    out.set_item("test_labels", data.test_labels)?;
    Ok(out)
}

/// Number of clusters chosen by forward testing of pairwise mean and
/// eigenspace differences.
#[pyfunction]
#[pyo3(signature = (curves, grid = None, max_k = 5, seed = 0))]
fn select_k(py: Python<'_>, curves: Vec<Vec<f64>>, grid: Option<Vec<f64>>, max_k: usize, seed: u64) -> PyResult<usize> {
    let grid = grid_from(grid)?;
    let curves = curves_from(&grid, curves)?;
    let opts = SelectKOptions { max_k, ..SelectKOptions::default() };
    py.detach(|| select_num_clusters(&curves, seed, &opts)).map(|r| r.k).map_err(py_err)
}

#[pymodule]
pub fn pytrajmix(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(select_k, m)?)?;
    Ok(())
}
