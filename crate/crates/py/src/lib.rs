//! Python module `rst`: tensors, a few kernels, the model and its tooling.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rst_core::audit::{run_audit, AuditOptions, AuditScope};
use rst_core::image_io::{load_rgb, save_rgb};
use rst_core::model::{check_weights, forward_graph};
use rst_core::polar::{build_polar_grid, build_sector_masks, WindowLayout};
use rst_core::train::{bundled_data_dir, load_pairs, restoration_loss, train_demo as core_train};
use rst_core::{build, count_flops, forward, ops, weights_io, Graph, ModelConfig, ParamSet, Plans, RstError, RunConfig, WeightStore};

fn py_err(e: RstError) -> PyErr {
    match e {
        RstError::Io { .. } | RstError::Format { .. } | RstError::Checksum { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn model_config(json: Option<&str>) -> PyResult<ModelConfig> {
    let cfg = match json {
        None => return Ok(ModelConfig::tiny()),
        Some(text) => serde_json::from_str::<ModelConfig>(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Dense float32 tensor, row-major.
#[pyclass(name = "Tensor", module = "rst", from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    inner: rst_core::Tensor<f32>,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(data: Vec<f32>, shape: Vec<usize>) -> PyResult<Self> {
        let inner = rst_core::Tensor::new(&shape, data).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        Self {
            inner: rst_core::Tensor::zeros(&shape),
        }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn max_abs_diff(&self, other: &PyTensor) -> f64 {
        self.inner.max_abs_diff(&other.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.numel()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

impl From<rst_core::Tensor<f32>> for PyTensor {
    fn from(inner: rst_core::Tensor<f32>) -> Self {
        Self { inner }
    }
}

#[pyfunction]
fn matmul(a: &PyTensor, b: &PyTensor) -> PyResult<PyTensor> {
    ops::matmul(&a.inner, &b.inner).map(Into::into).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (x, kernel, stride=1, pad=0))]
fn conv2d(x: &PyTensor, kernel: &PyTensor, stride: usize, pad: usize) -> PyResult<PyTensor> {
    ops::conv2d(&x.inner, &kernel.inner, stride, pad).map(Into::into).map_err(py_err)
}

#[pyfunction]
fn softmax(x: &PyTensor, axis: usize) -> PyResult<PyTensor> {
    ops::softmax(&x.inner, axis).map(Into::into).map_err(py_err)
}

#[pyfunction]
fn load_image(path: PathBuf) -> PyResult<PyTensor> {
    load_rgb::<f32>(&path).map(Into::into).map_err(py_err)
}

#[pyfunction]
fn save_image(path: PathBuf, image: &PyTensor) -> PyResult<()> {
    save_rgb(&path, &image.inner).map_err(py_err)
}

#[pyfunction]
fn psnr(a: &PyTensor, b: &PyTensor) -> f64 {
    rst_core::oracle::psnr(&a.inner.to_f64_vec(), &b.inner.to_f64_vec())
}

/// JSON of the small two-level configuration.
#[pyfunction]
fn tiny_config() -> String {
    serde_json::to_string_pretty(&ModelConfig::tiny()).expect("config serializes")
}

#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&ModelConfig::default()).expect("config serializes")
}

/// One `(H, W)` plane per sector as flat 0/1 lists.
#[pyfunction]
fn sector_masks(height: usize, width: usize, count: usize) -> PyResult<Vec<Vec<u8>>> {
    let set = build_sector_masks(&build_polar_grid(height, width), count).map_err(py_err)?;
    Ok((0..count).map(|i| set.mask(i)).collect())
}

/// Pixel indices of each radial strip, in azimuth order.
#[pyfunction]
fn strip_windows(height: usize, width: usize, n_phi: usize, n_r: usize) -> PyResult<Vec<Vec<usize>>> {
    WindowLayout::for_size(height, width, n_phi, n_r)
        .map(|l| l.windows)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (height, width, config=None))]
fn flops<'py>(py: Python<'py>, height: usize, width: usize, config: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = model_config(config)?;
    let table = count_flops(&cfg, height, width).map_err(py_err)?;
    let d = PyDict::new(py);
    for (module, v) in &table.rows {
        d.set_item(module, v)?;
    }
    d.set_item("total", table.total())?;
    Ok(d)
}

/// Runs the oracle audits; returns one dict per report.
#[pyfunction]
#[pyo3(signature = (scope="all", seed=0, instances=30))]
fn audit<'py>(py: Python<'py>, scope: &str, seed: u64, instances: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let scope: AuditScope = scope.parse().map_err(py_err)?;
    let opts = AuditOptions {
        seed,
        instances,
        fault: None,
    };
    let mut reports = Vec::new();
    run_audit(scope, &opts, &mut |r| reports.push(r)).map_err(py_err)?;
    reports
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("op", r.op)?;
            d.set_item("instance", r.instance)?;
            d.set_item("max_abs_diff", r.max_abs_diff)?;
            d.set_item("rel_error", r.rel_error)?;
            d.set_item("tolerance", r.tolerance)?;
            d.set_item("pass", r.pass)?;
            Ok(d)
        })
        .collect()
}

/// Network weights plus the configuration they were built for.
#[pyclass(name = "Model", module = "rst")]
pub struct PyModel {
    cfg: ModelConfig,
    weights: WeightStore<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config=None, seed=0))]
    fn new(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg = model_config(config)?;
        let weights = build::<f32>(&cfg, seed).map_err(py_err)?;
        Ok(Self { cfg, weights })
    }

    #[staticmethod]
    #[pyo3(signature = (path, config=None))]
    fn load(path: PathBuf, config: Option<&str>) -> PyResult<Self> {
        let cfg = model_config(config)?;
        let weights = weights_io::load::<f32>(&path).map_err(py_err)?;
        check_weights(&cfg, &weights).map_err(py_err)?;
        Ok(Self { cfg, weights })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        weights_io::save(&self.weights, &path).map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.weights.param_count()
    }

    fn names(&self) -> Vec<String> {
        self.weights.names().map(str::to_string).collect()
    }

    fn get(&self, name: &str) -> PyResult<PyTensor> {
        self.weights
            .get(name)
            .cloned()
            .map(Into::into)
            .ok_or_else(|| PyValueError::new_err(format!("no tensor named '{name}'")))
    }

    fn set(&mut self, name: &str, value: &PyTensor) -> PyResult<()> {
        let slot = self
            .weights
            .get_mut(name)
            .ok_or_else(|| PyValueError::new_err(format!("no tensor named '{name}'")))?;
        if slot.shape() != value.inner.shape() {
            return Err(PyValueError::new_err(format!(
                "shape {:?} does not match {:?}",
                value.inner.shape(),
                slot.shape()
            )));
        }
        *slot = value.inner.clone();
        Ok(())
    }

    /// Restores a 3×H×W image in [0, 1].
    fn forward(&self, py: Python<'_>, image: &PyTensor) -> PyResult<PyTensor> {
        let x = image.inner.clone();
        py.detach(|| forward(&x, &self.weights, &self.cfg))
            .map(Into::into)
            .map_err(py_err)
    }

    /// Training loss and its gradient with respect to every weight.
    #[pyo3(signature = (image, target, lambda_freq=0.1))]
    fn loss_and_grad<'py>(
        &self,
        py: Python<'py>,
        image: &PyTensor,
        target: &PyTensor,
        lambda_freq: f64,
    ) -> PyResult<(f32, Bound<'py, PyDict>)> {
        let (_, h, w) = image.inner.chw("loss_and_grad").map_err(py_err)?;
        let plans = Plans::new(&self.cfg, h, w).map_err(py_err)?;
        let g = Graph::<f32>::new();
        let ps = ParamSet::track(&g, &self.weights);
        let pred = forward_graph(&g, &g.constant(image.inner.clone()), &ps, &self.cfg, &plans).map_err(py_err)?;
        let loss = restoration_loss(&g, &pred, &g.constant(target.inner.clone()), lambda_freq).map_err(py_err)?;
        let grads = g.backward(&loss).map_err(py_err)?;
        let d = PyDict::new(py);
        for (name, t) in ps.gradients(&self.weights, &grads) {
            d.set_item(name, PyTensor::from(t))?;
        }
        Ok((loss.value().item(), d))
    }
}

/// Seeded overfitting run on blur/sharp pairs; returns the model and per-step losses.
#[pyfunction]
#[pyo3(signature = (steps=200, seed=0, data_dir=None, config=None))]
fn train_demo(py: Python<'_>, steps: usize, seed: u64, data_dir: Option<PathBuf>, config: Option<&str>) -> PyResult<(PyModel, Vec<f64>)> {
    let run = RunConfig {
        model: model_config(config)?,
        seed,
        ..RunConfig::default()
    };
    let dir = data_dir.unwrap_or_else(bundled_data_dir);
    let pairs: Vec<_> = load_pairs::<f32>(&dir)
        .map_err(py_err)?
        .into_iter()
        .map(|(_, b, s)| (b, s))
        .collect();
    let trained = py.detach(|| core_train(&run, &pairs, steps, seed)).map_err(py_err)?;
    let losses = trained.log.steps.iter().map(|s| s.loss).collect();
    Ok((
        PyModel {
            cfg: run.model,
            weights: trained.weights,
        },
        losses,
    ))
}

#[pymodule]
#[pyo3(name = "rst")]
fn rst_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(matmul, m)?)?;
    m.add_function(wrap_pyfunction!(conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(save_image, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(tiny_config, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(sector_masks, m)?)?;
    m.add_function(wrap_pyfunction!(strip_windows, m)?)?;
    m.add_function(wrap_pyfunction!(flops, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(train_demo, m)?)?;
    Ok(())
}
