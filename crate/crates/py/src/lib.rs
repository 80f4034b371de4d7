//! Python bindings: metrics, spatial statistics, datasets, models, maps and
//! the pipeline stages.

use std::path::PathBuf;

use lfmc_core::config::PipelineConfig as CoreConfig;
use lfmc_core::dataset::{DatasetContainer, SplitTag, TileShape};
use lfmc_core::domain::{denormalize_target, normalize_target, LFMC_CAP};
use lfmc_core::eval::{
    self, knn_weights, morans_i_pvalue, predict_split, Alternative, MoranResult,
};
use lfmc_core::mapper::LfmcMap;
use lfmc_core::model::{load_model, AnyPredictor, Predictor};
use lfmc_core::pipeline::{self, AblationMode, RunOptions};
use lfmc_core::synthetic::{scene_pipeline_config, Scene, SceneConfig};
use lfmc_core::{Error, ErrorKind};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyAny;

create_exception!(lfmc, LfmcError, PyException);
create_exception!(lfmc, ConfigError, LfmcError);
create_exception!(lfmc, DataError, LfmcError);

fn to_py(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Config => ConfigError::new_err(e.to_string()),
        ErrorKind::Data => DataError::new_err(e.to_string()),
        ErrorKind::Runtime => LfmcError::new_err(e.to_string()),
    }
}

/// Converts a serializable value to Python objects through JSON.
fn to_object<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| LfmcError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn split_tag(name: &str) -> PyResult<SplitTag> {
    match name {
        "train" => Ok(SplitTag::Train),
        "val" => Ok(SplitTag::Val),
        "test" => Ok(SplitTag::Test),
        other => Err(ConfigError::new_err(format!("unknown split {other:?}"))),
    }
}

#[pyfunction]
fn rmse(preds: Vec<f64>, targets: Vec<f64>) -> PyResult<f64> {
    eval::rmse(&preds, &targets).map_err(to_py)
}

#[pyfunction]
fn mae(preds: Vec<f64>, targets: Vec<f64>) -> PyResult<f64> {
    eval::mae(&preds, &targets).map_err(to_py)
}

#[pyfunction]
fn r2(preds: Vec<f64>, targets: Vec<f64>) -> PyResult<f64> {
    eval::r2(&preds, &targets).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (value, cap = LFMC_CAP))]
fn normalize(value: f64, cap: f64) -> PyResult<f64> {
    normalize_target(value, cap).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (value, cap = LFMC_CAP))]
fn denormalize(value: f64, cap: f64) -> f64 {
    denormalize_target(value, cap)
}

/// Moran's I of `values` at `points` (latitude, longitude) under k-nearest
/// neighbor weights.
#[pyfunction]
#[pyo3(signature = (values, points, k = 8))]
fn morans_i(values: Vec<f64>, points: Vec<(f64, f64)>, k: usize) -> PyResult<f64> {
    let w = knn_weights(&points, k).map_err(to_py)?;
    eval::morans_i(&values, &w).map_err(to_py)
}

#[pyclass(name = "MoranResult", frozen, get_all)]
struct PyMoranResult {
    i_value: f64,
    expected: f64,
    p_value: f64,
    n_permutations: usize,
    seed: u64,
    k: usize,
}

impl From<MoranResult> for PyMoranResult {
    fn from(m: MoranResult) -> Self {
        PyMoranResult {
            i_value: m.i_value,
            expected: m.expected,
            p_value: m.p_value,
            n_permutations: m.n_permutations,
            seed: m.seed,
            k: m.k,
        }
    }
}

#[pymethods]
impl PyMoranResult {
    fn __repr__(&self) -> String {
        format!(
            "MoranResult(I={:.6}, p={:.4}, k={})",
            self.i_value, self.p_value, self.k
        )
    }
}

/// Moran's I with a permutation p-value.
#[pyfunction]
#[pyo3(signature = (values, points, k = 8, permutations = 999, seed = 0, two_sided = false))]
fn morans_i_test(
    py: Python<'_>,
    values: Vec<f64>,
    points: Vec<(f64, f64)>,
    k: usize,
    permutations: usize,
    seed: u64,
    two_sided: bool,
) -> PyResult<PyMoranResult> {
    let alt = if two_sided {
        Alternative::TwoSided
    } else {
        Alternative::Greater
    };
    py.detach(|| {
        let w = knn_weights(&points, k)?;
        morans_i_pvalue(&values, &w, permutations, seed, alt)
    })
    .map(PyMoranResult::from)
    .map_err(to_py)
}

/// A prepared dataset directory.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: DatasetContainer,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        DatasetContainer::read(&path)
            .map(|inner| PyDataset { inner })
            .map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.instances.len()
    }

    /// (height, width, timesteps) of every tile.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let TileShape {
            height,
            width,
            timesteps,
        } = self.inner.layout.shape;
        (height, width, timesteps)
    }

    #[getter]
    fn feature_len(&self) -> usize {
        self.inner.layout.feature_len()
    }

    /// Instance counts per split.
    fn counts(&self) -> (usize, usize, usize) {
        let c = self.inner.counts();
        (c.train, c.val, c.test)
    }

    /// Labels in percent, capped.
    #[pyo3(signature = (split = "test"))]
    fn labels(&self, split: &str) -> PyResult<Vec<f64>> {
        let tag = split_tag(split)?;
        Ok(self
            .inner
            .subset(tag)
            .iter()
            .map(|i| {
                i.meta.lfmc_percent.map_or_else(
                    || denormalize_target(i.target.unwrap_or(0.0) as f64, self.inner.cap_percent),
                    |v| v.min(self.inner.cap_percent),
                )
            })
            .collect())
    }

    /// Per-instance metadata as dictionaries.
    #[pyo3(signature = (split = "test"))]
    fn metadata(&self, py: Python<'_>, split: &str) -> PyResult<Py<PyAny>> {
        let metas: Vec<_> = self
            .inner
            .subset(split_tag(split)?)
            .iter()
            .map(|i| i.meta.clone())
            .collect();
        to_object(py, &metas)
    }
}

/// A saved baseline or regressor.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: AnyPredictor,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_model(&path)
            .map(|inner| PyModel { inner })
            .map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().label()
    }

    #[getter]
    fn model_id(&self) -> String {
        self.inner.model_id()
    }

    /// Predictions in percent for one split of a dataset.
    #[pyo3(signature = (dataset, split = "test"))]
    fn predict(&self, py: Python<'_>, dataset: &PyDataset, split: &str) -> PyResult<Vec<f64>> {
        let tag = split_tag(split)?;
        py.detach(|| predict_split(&self.inner, &dataset.inner.subset(tag)))
            .map(|p| p.preds)
            .map_err(to_py)
    }
}

/// A monthly LFMC map read from a GeoTIFF.
#[pyclass(name = "LfmcMap", frozen)]
struct PyMap {
    inner: LfmcMap,
}

#[pymethods]
impl PyMap {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        LfmcMap::read(&path)
            .map(|inner| PyMap { inner })
            .map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.grid.height, self.inner.grid.width)
    }

    #[getter]
    fn month(&self) -> String {
        self.inner.month.to_string()
    }

    #[getter]
    fn model_id(&self) -> String {
        self.inner.model_id.clone()
    }

    /// Row-major values in percent; nodata is -1.
    fn values(&self) -> Vec<f32> {
        self.inner.values.clone()
    }

    fn valid_count(&self) -> usize {
        self.inner.valid_count()
    }
}

/// A validated pipeline configuration and its stages.
#[pyclass(name = "Pipeline")]
struct PyPipeline {
    config: CoreConfig,
}

#[pymethods]
impl PyPipeline {
    #[new]
    #[pyo3(signature = (path, seed = None))]
    fn new(path: PathBuf, seed: Option<u64>) -> PyResult<Self> {
        let mut config = CoreConfig::load(&path).map_err(to_py)?;
        if let Some(s) = seed {
            config.set_seed(s);
        }
        Ok(PyPipeline { config })
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.config.output_dir()
    }

    fn to_json(&self) -> String {
        self.config.to_json()
    }

    #[pyo3(signature = (overwrite = false))]
    fn prepare(&self, py: Python<'_>, overwrite: bool) -> PyResult<Py<PyAny>> {
        let r = py
            .detach(|| pipeline::prepare(&self.config, RunOptions { overwrite }))
            .map_err(to_py)?;
        to_object(py, &r)
    }

    #[pyo3(signature = (overwrite = false))]
    fn train(&self, py: Python<'_>, overwrite: bool) -> PyResult<Py<PyAny>> {
        let r = py
            .detach(|| pipeline::train(&self.config, RunOptions { overwrite }))
            .map_err(to_py)?;
        to_object(py, &r)
    }

    #[pyo3(signature = (overwrite = false))]
    fn evaluate(&self, py: Python<'_>, overwrite: bool) -> PyResult<Py<PyAny>> {
        let r = py
            .detach(|| pipeline::evaluate_models(&self.config, RunOptions { overwrite }))
            .map_err(to_py)?;
        to_object(py, &r)
    }

    /// Writes the maps and returns their paths.
    #[pyo3(signature = (overwrite = false))]
    fn map(&self, py: Python<'_>, overwrite: bool) -> PyResult<Vec<PathBuf>> {
        py.detach(|| pipeline::map(&self.config, RunOptions { overwrite }))
            .map(|o| o.files)
            .map_err(to_py)
    }

    #[pyo3(signature = (mode, overwrite = false))]
    fn ablate(&self, py: Python<'_>, mode: &str, overwrite: bool) -> PyResult<Py<PyAny>> {
        let mode: AblationMode = mode.parse().map_err(to_py)?;
        let r = py
            .detach(|| pipeline::ablate(&self.config, mode, RunOptions { overwrite }))
            .map_err(to_py)?;
        to_object(py, &r)
    }
}

/// Writes a synthetic scene under `dir` and returns the path of a
/// configuration that runs on it.
#[pyfunction]
#[pyo3(signature = (dir, size = 24, sites = 30))]
fn write_demo(dir: PathBuf, size: usize, sites: usize) -> PyResult<PathBuf> {
    let scene = Scene::new(SceneConfig {
        size,
        months: 8,
        ..SceneConfig::default()
    });
    let shape = TileShape {
        height: 4,
        width: 4,
        timesteps: 3,
    };
    let obs = scene.observations(sites, 3, 3, shape.timesteps - 1, 5.0);
    let files = scene
        .write_files(&dir.join("inputs"), &obs)
        .map_err(to_py)?;
    let cfg = scene_pipeline_config(&scene, &files, &dir.join("output"), shape);
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).map_err(|e| to_py(Error::io(&path, e)))?;
    Ok(path)
}

#[pymodule]
fn lfmc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("LfmcError", py.get_type::<LfmcError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("LFMC_CAP", LFMC_CAP)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(r2, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(denormalize, m)?)?;
    m.add_function(wrap_pyfunction!(morans_i, m)?)?;
    m.add_function(wrap_pyfunction!(morans_i_test, m)?)?;
    m.add_function(wrap_pyfunction!(write_demo, m)?)?;
    m.add_class::<PyMoranResult>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyMap>()?;
    m.add_class::<PyPipeline>()?;
    Ok(())
}
