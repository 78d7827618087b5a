use std::path::PathBuf;

use isp_core::cli::{cmd_eval, cmd_synth, cmd_train, RunConfig};
use isp_core::imagecore::{psnr, Image, MosaicPattern, RawImage, RgbImage, PSNR_CAP_DB};
use isp_core::pipeline::{self, IspConfig, PipelineModel};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: isp_core::Error) -> PyErr {
    match e {
        isp_core::Error::Io { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Trained or freshly initialised pipeline model.
#[pyclass(name = "Model")]
struct PyModel {
    inner: PipelineModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (seed = 0, n_atoms = None))]
    fn new(seed: u64, n_atoms: Option<usize>) -> PyResult<Self> {
        let mut cfg = IspConfig::default();
        if let Some(n) = n_atoms {
            cfg.n_atoms = n;
        }
        Ok(PyModel { inner: PipelineModel::init(cfg, seed).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel { inner: pipeline::load_checkpoint(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        pipeline::save_checkpoint(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step
    }

    /// sRGB `[h, w, 3]` row-major samples to a Bayer plane of `h * w` samples.
    fn reverse(&self, rgb: Vec<f64>, height: usize, width: usize) -> PyResult<Vec<f64>> {
        let x = RgbImage::new(height, width, rgb).map_err(err)?;
        Ok(pipeline::reverse_pass(&x, &self.inner, false).map_err(err)?.raw.plane.data)
    }

    /// Bayer plane of `h * w` samples to sRGB `[h, w, 3]`.
    fn forward(&self, raw: Vec<f64>, height: usize, width: usize) -> PyResult<Vec<f64>> {
        let plane = Image::new(height, width, 1, raw).map_err(err)?;
        let y = RawImage::new(plane, self.inner.config.pattern).map_err(err)?;
        Ok(pipeline::forward_pass(&y, &self.inner, false).map_err(err)?.rgb.into_image().data)
    }

    /// Cycle reconstruction and its PSNR against the input.
    fn cycle(&self, rgb: Vec<f64>, height: usize, width: usize) -> PyResult<(Vec<f64>, f64)> {
        let x = RgbImage::new(height, width, rgb).map_err(err)?;
        let (back, p) = pipeline::cycle(&x, &self.inner).map_err(err)?;
        Ok((back.into_image().data, p))
    }
}

/// Bayer mosaic of an sRGB `[h, w, 3]` buffer with the RGGB layout.
#[pyfunction]
fn mosaic(rgb: Vec<f64>, height: usize, width: usize) -> PyResult<Vec<f64>> {
    let x = RgbImage::new(height, width, rgb).map_err(err)?;
    Ok(isp_core::stages::mosaic(&x, MosaicPattern::RGGB).map_err(err)?.plane.data)
}

#[pyfunction]
#[pyo3(signature = (a, b, channels, height, width))]
fn psnr_db(a: Vec<f64>, b: Vec<f64>, channels: usize, height: usize, width: usize) -> PyResult<f64> {
    let a = Image::new(height, width, channels, a).map_err(err)?;
    let b = Image::new(height, width, channels, b).map_err(err)?;
    psnr(&a, &b, PSNR_CAP_DB).map_err(err)
}

/// Writes a synthetic-camera dataset and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, train = 8, val = 2, size = 32, seed = 0))]
fn synth(out_dir: PathBuf, train: usize, val: usize, size: usize, seed: u64) -> PyResult<PathBuf> {
    cmd_synth(&out_dir, train, val, size, seed).map_err(err)
}

/// Trains from a manifest; `config` is TOML text. Returns the history rows as
/// `(epoch, step, total, val_psnr_r)` tuples.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, config = None))]
fn train(manifest: PathBuf, out_dir: PathBuf, config: Option<&str>) -> PyResult<Vec<(usize, u64, f64, Option<f64>)>> {
    let cfg = match config {
        Some(text) => RunConfig::parse(text).map_err(err)?,
        None => RunConfig::default(),
    };
    let s = cmd_train(&manifest, &cfg, &out_dir).map_err(err)?;
    Ok(s.history.iter().map(|r| (r.epoch, r.step, r.total, r.val_psnr_r)).collect())
}

/// Per-image held-out PSNR_r for a checkpoint over a manifest's val split.
#[pyfunction]
fn evaluate(checkpoint: PathBuf, manifest: PathBuf) -> PyResult<Vec<(String, f64)>> {
    Ok(cmd_eval(&checkpoint, &manifest, None).map_err(err)?.per_image)
}

#[pymodule]
fn isp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(mosaic, m)?)?;
    m.add_function(wrap_pyfunction!(psnr_db, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
