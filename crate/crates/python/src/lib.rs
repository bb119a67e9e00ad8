//! Python bindings for the eitdiag pipeline.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use eitdiag::config::RunConfig;
use eitdiag::experiments::run_experiment as run_experiment_core;
use eitdiag::features::{fit_pca_with, PcaModel, Selector};
use eitdiag::forward::{measure as measure_core, ConductivityField, DriveProtocol};
use eitdiag::learners::angle;
use eitdiag::mesh::{build_mesh, Mesh as CoreMesh};
use eitdiag::phantom::{generate_dataset as generate_core, Experiment, Simulator};
use eitdiag::recon::{blob_centroid as blob_centroid_core, Reconstructor as CoreReconstructor};

fn err(e: eitdiag::Error) -> PyErr {
    match e.exit_code() {
        2 => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Flat key/value run configuration.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: RunConfig,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (overrides = None))]
    fn new(overrides: Option<HashMap<String, Bound<'_, PyAny>>>) -> PyResult<Self> {
        let mut inner = RunConfig::default();
        for (k, v) in overrides.unwrap_or_default() {
            inner.set(&k, &v.str()?.to_string()).map_err(err)?;
        }
        Ok(Self { inner })
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let text = match value.extract::<bool>() {
            Ok(b) => b.to_string(),
            Err(_) => value.str()?.to_string(),
        };
        self.inner.set(key, &text).map_err(err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .entries()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| PyValueError::new_err(format!("unknown config key '{key}'")))
    }

    fn noiseless(&self) -> Self {
        Self {
            inner: self.inner.clone().noiseless(),
        }
    }

    fn snapshot(&self) -> String {
        self.inner.snapshot()
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        RunConfig::KEYS.iter().map(|(k, _)| *k).collect()
    }
}

fn config_or_default(config: Option<&Config>) -> RunConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

/// Triangular mesh of the circular tank with 16 electrodes.
#[pyclass(name = "Mesh")]
struct Mesh {
    inner: CoreMesh,
}

#[pymethods]
impl Mesh {
    #[new]
    #[pyo3(signature = (radius = 0.075, refinement = 1, electrode_coverage = 0.5))]
    fn new(radius: f64, refinement: u32, electrode_coverage: f64) -> PyResult<Self> {
        Ok(Self {
            inner: build_mesh(radius, refinement, electrode_coverage).map_err(err)?,
        })
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn n_elements(&self) -> usize {
        self.inner.n_elements()
    }

    fn nodes(&self) -> Vec<[f64; 2]> {
        self.inner.nodes().to_vec()
    }

    fn elements(&self) -> Vec<[usize; 3]> {
        self.inner.elements().to_vec()
    }

    fn element_areas(&self) -> Vec<f64> {
        self.inner.geometry().iter().map(|g| g.area).collect()
    }
}

/// 208-channel adjacent-drive frame for per-element conductivities.
#[pyfunction]
#[pyo3(signature = (mesh, sigma, current = 1e-3, contact_impedance = 1e-3))]
fn measure(mesh: &Mesh, sigma: Vec<f64>, current: f64, contact_impedance: f64) -> PyResult<Vec<f64>> {
    let field = ConductivityField::new(sigma).map_err(err)?;
    let frame = measure_core(&mesh.inner, &field, &DriveProtocol::adjacent(current), contact_impedance).map_err(err)?;
    Ok(frame.v)
}

fn parse_experiment(name: &str) -> PyResult<Experiment> {
    name.parse::<Experiment>().map_err(err)
}

/// Simulated labelled dataset as a dict with keys x, baseline, split, meta.
#[pyfunction]
#[pyo3(signature = (experiment, config = None))]
fn generate_dataset<'py>(py: Python<'py>, experiment: &str, config: Option<&Config>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config_or_default(config);
    let exp = parse_experiment(experiment)?;
    let ds = py
        .detach(|| {
            let mesh = cfg.mesh()?;
            let protocol = cfg.protocol();
            let sim = Simulator::new(&mesh, &protocol, cfg.contact_impedance, cfg.material(), cfg.noise())?;
            generate_core(&sim, &cfg.dataset(exp))
        })
        .map_err(err)?;
    let split: Vec<&str> = ds.split.iter().map(|s| s.name()).collect();
    to_py(
        py,
        &serde_json::json!({
            "experiment": ds.experiment.tag(),
            "x": ds.x,
            "baseline": ds.baseline,
            "split": split,
            "meta": ds.meta,
        }),
    )
}

/// Principal component model fitted on rows of `x`.
#[pyclass(name = "Pca")]
struct Pca {
    inner: PcaModel,
}

#[pymethods]
impl Pca {
    #[staticmethod]
    #[pyo3(signature = (x, k = 4, standardize = false))]
    fn fit(x: Vec<Vec<f64>>, k: usize, standardize: bool) -> PyResult<Self> {
        Ok(Self {
            inner: fit_pca_with(&x, Selector::Fixed(k), standardize).map_err(err)?,
        })
    }

    fn project(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        x.iter().map(|r| self.inner.project_row(r)).collect::<eitdiag::Result<_>>().map_err(err)
    }

    #[getter]
    fn explained_ratio(&self) -> Vec<f64> {
        self.inner.explained_ratio.clone()
    }

    #[getter]
    fn components(&self) -> Vec<Vec<f64>> {
        self.inner.components.clone()
    }

    fn cumulative_ratio(&self) -> f64 {
        self.inner.cumulative_ratio()
    }
}

/// Linearized one-step difference reconstruction.
#[pyclass(name = "Reconstructor")]
struct Reconstructor {
    inner: CoreReconstructor,
}

#[pymethods]
impl Reconstructor {
    #[new]
    #[pyo3(signature = (mesh, config = None))]
    fn new(py: Python<'_>, mesh: &Mesh, config: Option<&Config>) -> PyResult<Self> {
        let cfg = config_or_default(config);
        let m = &mesh.inner;
        let inner = py
            .detach(|| CoreReconstructor::new(m, &cfg.protocol(), &cfg.recon(m)?))
            .map_err(err)?;
        Ok(Self { inner })
    }

    fn reconstruct(&self, dv: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.reconstruct(&dv).map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (mesh, delta_sigma, fraction = eitdiag::recon::BLOB_FRACTION))]
fn blob_centroid(mesh: &Mesh, delta_sigma: Vec<f64>, fraction: f64) -> PyResult<[f64; 2]> {
    blob_centroid_core(&mesh.inner, &delta_sigma, fraction).map_err(err)
}

/// Runs one experiment and returns its report as a dict.
#[pyfunction]
#[pyo3(signature = (experiment, config = None, out = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    experiment: &str,
    config: Option<&Config>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config_or_default(config);
    let exp = parse_experiment(experiment)?;
    let report = py
        .detach(|| run_experiment_core(exp, &cfg, out.as_deref()))
        .map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
fn encode_angle(deg: f64) -> (f64, f64) {
    angle::encode(deg)
}

#[pyfunction]
fn decode_angle(s: f64, c: f64) -> PyResult<f64> {
    angle::decode(s, c).map_err(err)
}

#[pyfunction]
fn circular_error(a: f64, b: f64) -> f64 {
    angle::circular_error(a, b)
}

#[pymodule]
fn eitdiag_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<Mesh>()?;
    m.add_class::<Pca>()?;
    m.add_class::<Reconstructor>()?;
    m.add_function(wrap_pyfunction!(measure, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(blob_centroid, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(encode_angle, m)?)?;
    m.add_function(wrap_pyfunction!(decode_angle, m)?)?;
    m.add_function(wrap_pyfunction!(circular_error, m)?)?;
    Ok(())
}
