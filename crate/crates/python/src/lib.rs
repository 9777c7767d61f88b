//! Python bindings for `vidattack`.
//!
//! Videos cross the boundary as a `Video` object (dims plus a flat row-major
//! `(t, w, h, c)` list); reports come back as JSON strings with the same
//! schema the command-line tool writes.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use vidattack::config::{DatasetSpec, ExperimentConfig};
use vidattack::metrics::Report;
use vidattack::saliency::{spatial_mask as core_spatial_mask, spectral_residual, SalienceRatio};
use vidattack::synthetic::{SyntheticData, SyntheticSpec};
use vidattack::{bench, vbt, Dims, Error, Label, QuerySession, VideoTensor};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e @ (Error::InvalidDims(_)
        | Error::ShapeMismatch { .. }
        | Error::NonFinite
        | Error::NotBinary
        | Error::InvalidParameter(_)
        | Error::Format(_)
        | Error::Json(_)) => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

type Shape = (usize, usize, usize, usize);

fn dims(shape: Shape) -> PyResult<Dims> {
    Dims::new(shape.0, shape.1, shape.2, shape.3).map_err(to_py)
}

/// A video tensor of pixel values in `[0, 255]`.
#[pyclass(module = "pyvidattack", frozen)]
struct Video {
    inner: VideoTensor,
}

#[pymethods]
impl Video {
    #[new]
    fn new(shape: Shape, data: Vec<f64>) -> PyResult<Self> {
        Ok(Video { inner: VideoTensor::new(dims(shape)?, data).map_err(to_py)? })
    }

    /// Read a VBT1 file.
    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Video { inner: vbt::read_tensor(path).map_err(to_py)? })
    }

    /// Write a VBT1 file.
    fn write(&self, path: std::path::PathBuf) -> PyResult<()> {
        vbt::write_tensor(path, &self.inner).map_err(to_py)
    }

    /// `(t, w, h, c)`.
    #[getter]
    fn shape(&self) -> Shape {
        let d = self.inner.dims();
        (d.t, d.w, d.h, d.c)
    }

    fn tolist(&self) -> Vec<f64> {
        self.inner.as_slice().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.dims().len()
    }

    fn __repr__(&self) -> String {
        let (t, w, h, c) = self.shape();
        format!("Video(shape=({t}, {w}, {h}, {c}))")
    }
}

/// Spectral-residual saliency of one frame; returns `(map, degenerate)` with
/// the map flattened row-major over `(w, h)` and normalized to max 1.
#[pyfunction]
fn saliency_map(frame: Vec<f64>, width: usize, height: usize, channels: usize) -> PyResult<(Vec<f64>, bool)> {
    let map = spectral_residual(&frame, width, height, channels).map_err(to_py)?;
    Ok((map.data, map.degenerate))
}

/// Channel-coherent mask keeping the `phi` most salient pixels of every frame.
#[pyfunction]
fn spatial_mask(py: Python<'_>, video: &Video, phi: f64) -> PyResult<Vec<bool>> {
    let phi = SalienceRatio::new(phi).map_err(to_py)?;
    let mask = py.detach(|| core_spatial_mask(&video.inner, phi)).map_err(to_py)?;
    Ok(mask.as_slice().to_vec())
}

/// Generate a synthetic dataset (videos, linear victim, manifest) into `out`.
#[pyfunction]
#[pyo3(signature = (out, *, seed=0, samples=20, classes=4, shape=(16, 32, 32, 3), active_frames=Some(8), noise=8.0))]
fn generate_dataset(
    py: Python<'_>,
    out: std::path::PathBuf,
    seed: u64,
    samples: usize,
    classes: usize,
    shape: Shape,
    active_frames: Option<usize>,
    noise: f64,
) -> PyResult<()> {
    let spec = SyntheticSpec {
        seed,
        samples,
        num_classes: classes,
        dims: dims(shape)?,
        active_frames,
        noise,
        ..SyntheticSpec::default()
    };
    py.detach(|| SyntheticData::generate(&spec).and_then(|d| d.write(&out))).map_err(to_py)
}

fn experiment(config_json: Option<&str>, dataset_dir: Option<std::path::PathBuf>) -> PyResult<ExperimentConfig> {
    let mut config = match config_json {
        Some(text) => ExperimentConfig::from_json(text).map_err(to_py)?,
        None => ExperimentConfig::default(),
    };
    if let Some(path) = dataset_dir {
        config.dataset = DatasetSpec::Dir { path };
    }
    Ok(config)
}

/// Attack one video; returns the report as a JSON string.
///
/// `config_json` is an experiment config (`"schema": 1`); its dataset and
/// victim supply the initialization candidates and the classifier, unless
/// `dataset` names a directory written by `generate_dataset`.
#[pyfunction]
#[pyo3(signature = (video, label, *, config_json=None, dataset=None, id="video"))]
fn attack(
    py: Python<'_>,
    video: &Video,
    label: usize,
    config_json: Option<&str>,
    dataset: Option<std::path::PathBuf>,
    id: &str,
) -> PyResult<String> {
    let config = experiment(config_json, dataset)?;
    py.detach(|| {
        let resolved = config.resolve()?;
        let mut session = QuerySession::new(resolved.victim.as_ref());
        let result = vidattack::attack(&mut session, &video.inner, Label(label), &config.attack, &resolved.dataset)?;
        let mut report = Report::new(serde_json::to_value(&config)?, vec![result.metric_row(id)])?;
        report.details = Some(serde_json::to_value(result.details())?);
        report.to_json()
    })
    .map_err(to_py)
}

/// Run the variant comparison; returns the bench report as a JSON string.
#[pyfunction]
#[pyo3(signature = (config_json=None, *, dataset=None))]
fn run_bench(py: Python<'_>, config_json: Option<&str>, dataset: Option<std::path::PathBuf>) -> PyResult<String> {
    let config = experiment(config_json, dataset)?;
    py.detach(|| {
        let resolved = config.resolve()?;
        let report = bench::run_bench(
            resolved.victim.as_ref(),
            &resolved.dataset,
            &config.attack,
            &config.bench,
            config.log_queries,
            serde_json::to_value(&config)?,
        )?;
        report.to_json()
    })
    .map_err(to_py)
}

#[pymodule]
fn pyvidattack(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Video>()?;
    m.add_function(wrap_pyfunction!(saliency_map, m)?)?;
    m.add_function(wrap_pyfunction!(spatial_mask, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(attack, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    Ok(())
}
