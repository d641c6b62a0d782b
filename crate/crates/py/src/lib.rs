//! Python bindings. Tensors cross the boundary as flat lists of floats plus
//! a shape tuple; configs as dicts keyed like the CLI settings.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict};

use arfa_core::checkpoint::{load_checkpoint, save_checkpoint};
use arfa_core::data::{self, Geometry, SpriteOptions};
use arfa_core::error::Error;
use arfa_core::gradcheck::{run_suite, SuiteOptions};
use arfa_core::metrics::{self, MetricsReport};
use arfa_core::model::{build_model, ArfaModel, ModelConfig};
use arfa_core::train::{self as training, AdamState, TrainConfig};
use arfa_core::Tensor;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Dict values rendered the way the settings parser expects them.
fn kv_pairs(dict: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<(String, String)>> {
    let Some(dict) = dict else { return Ok(Vec::new()) };
    let mut out = Vec::new();
    for (k, v) in dict.iter() {
        let key: String = k.extract()?;
        let value = if v.is_instance_of::<PyBool>() { v.extract::<bool>()?.to_string() } else { v.str()?.to_string() };
        out.push((key.replace('_', "-"), value));
    }
    Ok(out)
}

fn tensor(data: Vec<f32>, shape: Vec<usize>) -> PyResult<Tensor<f32>> {
    Tensor::from_vec(&shape, data).map_err(py_err)
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mse", r.mse)?;
    d.set_item("mae", r.mae)?;
    d.set_item("psnr", r.psnr)?;
    d.set_item("ssim", r.ssim)?;
    d.set_item("mse_per_pixel", r.mse_per_pixel)?;
    d.set_item("mae_per_pixel", r.mae_per_pixel)?;
    d.set_item("n_sequences", r.n_sequences)?;
    d.set_item("n_frames", r.n_frames)?;
    Ok(d)
}

fn geometry(in_frames: usize, out_frames: usize, channels: usize, height: usize, width: usize) -> Geometry {
    Geometry { in_frames, out_frames, channels, height, width }
}

#[pyclass(name = "Model", module = "arfa")]
struct PyModel {
    inner: ArfaModel,
    adam: Option<AdamState>,
}

#[pymethods]
impl PyModel {
    /// Fresh model from a config dict (missing keys take defaults).
    #[new]
    #[pyo3(signature = (config=None, seed=0))]
    fn new(config: Option<&Bound<'_, PyDict>>, seed: u64) -> PyResult<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in kv_pairs(config)? {
            cfg.set(&k, &v).map_err(py_err)?;
        }
        Ok(PyModel { inner: build_model(&cfg, seed).map_err(py_err)?, adam: None })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = load_checkpoint(&path).map_err(py_err)?;
        Ok(PyModel { inner: ckpt.model, adam: ckpt.adam })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.inner, self.adam.as_ref()).map_err(py_err)
    }

    fn config(&self) -> Vec<(String, String)> {
        self.inner.config.to_kv()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.named_params().into_iter().map(|(n, _)| n).collect()
    }

    /// `(B, M·C, H, W)` inputs to `(B, N·C, H, W)` predictions.
    fn predict(&self, py: Python<'_>, data: Vec<f32>, shape: Vec<usize>) -> PyResult<(Vec<f32>, Vec<usize>)> {
        let x = tensor(data, shape)?;
        let y = py.detach(|| self.inner.predict(&x)).map_err(py_err)?;
        Ok((y.data().to_vec(), y.shape().to_vec()))
    }

    /// Trains on a `.arfd` file; returns one `(epoch, loss)` pair per epoch.
    #[pyo3(signature = (train_path, config=None))]
    fn train(&mut self, py: Python<'_>, train_path: PathBuf, config: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<(usize, f64)>> {
        let mut cfg = TrainConfig::default();
        for (k, v) in kv_pairs(config)? {
            cfg.set(&k, &v).map_err(py_err)?;
        }
        cfg.validate().map_err(py_err)?;
        let dataset = data::read_dataset(&train_path).map_err(py_err)?;
        let state = self.adam.get_or_insert_with(|| AdamState::new(&self.inner));
        let model = &mut self.inner;
        let logs = py.detach(|| training::train(model, state, &dataset, None, &cfg, |_| {})).map_err(py_err)?;
        Ok(logs.iter().map(|l| (l.epoch, l.loss)).collect())
    }

    fn evaluate<'py>(&self, py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
        let dataset = data::read_dataset(&path).map_err(py_err)?;
        let r = py.detach(|| training::evaluate(&self.inner, &dataset)).map_err(py_err)?;
        report_dict(py, &r)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.config;
        format!(
            "Model(width={}, enc={}x{}, dec={}x{}, params={})",
            c.width,
            c.enc_kind,
            c.enc_depth,
            c.dec_kind,
            c.dec_depth,
            self.inner.param_count()
        )
    }
}

/// One moving-shapes sequence as `(data, (F, C, H, W))`.
#[pyfunction]
#[pyo3(signature = (seed, in_frames=10, out_frames=10, channels=1, height=64, width=64, sprites=2, sprite_size=12, max_speed=3))]
#[allow(clippy::too_many_arguments)]
fn gen_sequence(
    seed: u64,
    in_frames: usize,
    out_frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    sprites: usize,
    sprite_size: usize,
    max_speed: usize,
) -> PyResult<(Vec<f32>, Vec<usize>)> {
    let opts = SpriteOptions { n_sprites: sprites, sprite_size, max_speed };
    let t = data::gen_sequence(seed, &geometry(in_frames, out_frames, channels, height, width), &opts).map_err(py_err)?;
    Ok((t.data().to_vec(), t.shape().to_vec()))
}

/// Writes `train.arfd` and `test.arfd` under `out_dir`; returns their paths.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=0, n_train=256, n_test=64, in_frames=10, out_frames=10, height=64, width=64))]
#[allow(clippy::too_many_arguments)]
fn make_splits(
    out_dir: PathBuf,
    seed: u64,
    n_train: usize,
    n_test: usize,
    in_frames: usize,
    out_frames: usize,
    height: usize,
    width: usize,
) -> PyResult<(PathBuf, PathBuf)> {
    let g = geometry(in_frames, out_frames, 1, height, width);
    data::make_splits(&out_dir, seed, n_train, n_test, &g, &SpriteOptions::default()).map_err(py_err)
}

/// Metrics of `(B, N, C, H, W)` predictions against targets.
#[pyfunction]
#[pyo3(signature = (pred, target, shape, data_range=1.0))]
fn evaluate_pair<'py>(
    py: Python<'py>,
    pred: Vec<f32>,
    target: Vec<f32>,
    shape: Vec<usize>,
    data_range: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::evaluate_pair(&tensor(pred, shape.clone())?, &tensor(target, shape)?, data_range).map_err(py_err)?;
    report_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (mse, data_range=1.0))]
fn psnr_from_mse(mse: f64, data_range: f64) -> f64 {
    metrics::psnr_from_mse(mse, data_range)
}

/// Copy-last-input-frame baseline on a `.arfd` file.
#[pyfunction]
fn evaluate_copy_last<'py>(py: Python<'py>, path: PathBuf, in_frames: usize) -> PyResult<Bound<'py, PyDict>> {
    let dataset = data::read_dataset(&path).map_err(py_err)?;
    let g = dataset.geometry(in_frames).map_err(py_err)?;
    report_dict(py, &training::evaluate_copy_last(&dataset, &g).map_err(py_err)?)
}

/// `(op, max_rel_error, passed)` for every checked op.
#[pyfunction]
#[pyo3(signature = (seed=0, eps=1e-4, tolerance=1e-6))]
fn gradcheck(py: Python<'_>, seed: u64, eps: f64, tolerance: f64) -> PyResult<Vec<(&'static str, f64, bool)>> {
    let opts = SuiteOptions { seed, eps, tolerance, fault: None };
    let results = py.detach(|| run_suite(&opts)).map_err(py_err)?;
    Ok(results.into_iter().map(|r| (r.op, r.max_rel_error, r.passed)).collect())
}

#[pymodule]
fn arfa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(gen_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(make_splits, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_pair, m)?)?;
    m.add_function(wrap_pyfunction!(psnr_from_mse, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_copy_last, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
