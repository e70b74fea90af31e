//! Python bindings. Masks go in as flat row-major `0/1` sequences (list or
//! `bytes`) and come back as `bytes`; images are planar RGB float lists in `[0, 1]`.

use std::collections::HashMap;
use std::path::PathBuf;

use fanet::data::{generate_synthetic as gen_synthetic, Image, Sample, SyntheticSpec};
use fanet::error::Error;
use fanet::inference::{iterative_predict, InferenceOptions};
use fanet::mask_codec::{self, BinaryMask, GrayImage, RleMask};
use fanet::metrics::{confusion, metric_suite as suite};
use fanet::model::{self, Ablation, Checkpoint, Fanet, NetworkConfig};
use fanet::training::{fit as fit_model, TrainConfig};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Image { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn mask(values: Vec<u8>, height: usize, width: usize) -> PyResult<BinaryMask> {
    BinaryMask::new(height, width, values).map_err(err)
}

fn network(ablation: &str, widths: Option<Vec<usize>>) -> PyResult<NetworkConfig> {
    let ablation: Ablation = ablation.parse().map_err(err)?;
    let mut cfg = NetworkConfig::default();
    if let Some(w) = widths {
        cfg = cfg.with_widths(&w);
    }
    Ok(cfg.with_ablation(ablation))
}

/// Run lengths of a mask, starting with a (possibly empty) zero run.
#[pyfunction]
fn rle_encode(values: Vec<u8>, height: usize, width: usize) -> PyResult<Vec<u32>> {
    Ok(mask_codec::rle_encode(&mask(values, height, width)?).runs)
}

#[pyfunction]
fn rle_decode(runs: Vec<u32>, height: usize, width: usize) -> PyResult<Vec<u8>> {
    let rle = RleMask { height, width, runs };
    Ok(mask_codec::rle_decode(&rle).map_err(err)?.values().to_vec())
}

/// Returns `(threshold, mask)` for a grayscale image in `[0, 1]`.
#[pyfunction]
#[pyo3(signature = (values, height, width, levels = 256))]
fn otsu_threshold(values: Vec<f32>, height: usize, width: usize, levels: usize) -> PyResult<(f32, Vec<u8>)> {
    let image = GrayImage::new(height, width, values).map_err(err)?;
    let r = mask_codec::otsu_threshold(&image, levels);
    Ok((r.threshold, r.mask.values().to_vec()))
}

#[pyfunction]
fn metric_suite(pred: Vec<u8>, target: Vec<u8>, height: usize, width: usize) -> PyResult<HashMap<&'static str, f64>> {
    let counts = confusion(&mask(pred, height, width)?, &mask(target, height, width)?).map_err(err)?;
    let m = suite(&counts);
    Ok(HashMap::from([
        ("f1", m.f1),
        ("iou", m.iou),
        ("precision", m.precision),
        ("recall", m.recall),
        ("specificity", m.specificity),
        ("accuracy", m.accuracy),
        ("f2", m.f2),
    ]))
}

#[pyfunction]
#[pyo3(signature = (ablation = "B4", widths = None))]
fn count_parameters(ablation: &str, widths: Option<Vec<usize>>) -> PyResult<usize> {
    model::count_parameters(&network(ablation, widths)?).map_err(err)
}

/// `(id, image, mask)` triples for the train and test splits.
#[pyfunction]
#[pyo3(signature = (train = 20, test = 5, size = 32, seed = 0))]
#[allow(clippy::type_complexity)]
fn generate_synthetic(
    train: usize,
    test: usize,
    size: usize,
    seed: u64,
) -> PyResult<(Vec<(String, Vec<f32>, Vec<u8>)>, Vec<(String, Vec<f32>, Vec<u8>)>)> {
    let spec = SyntheticSpec {
        train,
        test,
        size,
        seed,
        ..SyntheticSpec::default()
    };
    let set = gen_synthetic(&spec).map_err(err)?;
    let flat = |v: Vec<Sample>| {
        v.into_iter()
            .map(|s| (s.id, s.image.data().to_vec(), s.mask.values().to_vec()))
            .collect()
    };
    Ok((flat(set.train), flat(set.test)))
}

/// Per-sample feedback masks stored run-length coded with epoch stamps.
#[pyclass]
#[derive(Default)]
struct MaskStore {
    inner: mask_codec::MaskStore,
}

#[pymethods]
impl MaskStore {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    fn put(&mut self, id: &str, values: Vec<u8>, height: usize, width: usize, epoch: u32) -> PyResult<()> {
        self.inner.put(id, &mask(values, height, width)?, epoch).map_err(err)
    }

    fn get(&self, id: &str) -> Option<Vec<u8>> {
        self.inner.get(id).map(|m| m.values().to_vec())
    }

    fn epoch_of(&self, id: &str) -> Option<u32> {
        self.inner.epoch_of(id)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: mask_codec::MaskStore::load(&path).map_err(err)?,
        })
    }
}

#[pyclass]
struct Network {
    inner: Fanet<f32>,
}

#[pymethods]
impl Network {
    #[new]
    #[pyo3(signature = (ablation = "B4", widths = None, seed = 0))]
    fn new(ablation: &str, widths: Option<Vec<usize>>, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: Fanet::new(network(ablation, widths)?, seed).map_err(err)?,
        })
    }

    fn num_parameters(&mut self) -> usize {
        self.inner.num_parameters()
    }

    #[getter]
    fn ablation(&self) -> Option<String> {
        self.inner.config().ablation().map(|a| a.to_string())
    }

    /// Binarized masks of iterations `0..=iterations`.
    #[pyo3(signature = (image, height, width, iterations = 10))]
    fn predict(&mut self, image: Vec<f32>, height: usize, width: usize, iterations: usize) -> PyResult<Vec<Vec<u8>>> {
        let image = Image::new(height, width, image).map_err(err)?;
        let options = InferenceOptions {
            iterations,
            early_stop: false,
        };
        let trace = iterative_predict(&mut self.inner, &image, options, None).map_err(err)?;
        Ok(trace.masks.iter().map(|m| m.values().to_vec()).collect())
    }

    fn save(&mut self, path: PathBuf) -> PyResult<()> {
        Checkpoint::from_model(&mut self.inner, Default::default())
            .save(&path)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = Checkpoint::load(&path).and_then(|c| c.to_model()).map_err(err)?;
        Ok(Self { inner })
    }
}

/// Trains on `(id, image, mask)` triples; returns the best-validation
/// network and the per-epoch training losses.
#[pyfunction]
#[pyo3(signature = (samples, height, width, epochs = 5, learning_rate = 1e-3, batch_size = 8, seed = 0, ablation = "B4", widths = None))]
#[allow(clippy::too_many_arguments)]
fn fit(
    samples: Vec<(String, Vec<f32>, Vec<u8>)>,
    height: usize,
    width: usize,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
    ablation: &str,
    widths: Option<Vec<usize>>,
) -> PyResult<(Network, Vec<f64>)> {
    let net = network(ablation, widths)?;
    let samples = samples
        .into_iter()
        .map(|(id, image, m)| {
            let image = Image::new(height, width, image).map_err(err)?;
            Sample::new(id, image, mask(m, height, width)?).map_err(err)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let config = TrainConfig {
        epochs,
        learning_rate,
        batch_size,
        seed,
        ..TrainConfig::default()
    };
    let outcome = fit_model(&config, &net, &samples, None, &mut |_| {}).map_err(err)?;
    let losses = outcome.state.history.iter().map(|r| r.train_loss).collect();
    let inner = outcome.best.to_model().map_err(err)?;
    Ok((Network { inner }, losses))
}

#[pymodule]
fn pyfanet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(rle_encode, m)?)?;
    m.add_function(wrap_pyfunction!(rle_decode, m)?)?;
    m.add_function(wrap_pyfunction!(otsu_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(metric_suite, m)?)?;
    m.add_function(wrap_pyfunction!(count_parameters, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_class::<MaskStore>()?;
    m.add_class::<Network>()?;
    Ok(())
}
