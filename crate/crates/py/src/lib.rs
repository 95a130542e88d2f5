//! Python bindings: train, predict, save/load and augment from Python.
//!
//! Images cross the boundary as flat row-major lists of 2048 floats in
//! [0, 1] (64x32). Build with `cargo build -p bmvr-py --release` and load
//! the resulting `libbmvr_py.so` as `bmvr_py` (see python/smoke_test.py).

use std::collections::HashMap;
use std::path::Path;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use bmvr::{GrayImage, Rng, SystemConfig, Traversal, VprSystem};

fn to_py_err(e: bmvr::Error) -> PyErr {
    match e {
        bmvr::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn image_from_pixels(pixels: Vec<f64>) -> PyResult<GrayImage> {
    GrayImage::from_pixels(pixels).map_err(to_py_err)
}

/// A trained recognition system.
#[pyclass(name = "System")]
struct PySystem {
    inner: VprSystem,
}

#[pymethods]
impl PySystem {
    /// Trains a full system from an ordered list of frames (each a flat
    /// list of 2048 pixels). Returns (system, report_dict).
    #[staticmethod]
    #[pyo3(signature = (
        frames,
        neurons = 192,
        baseline_dropout = 0.75,
        baseline_epochs = 30,
        models = 2,
        kernel_width = 4,
        merger_dropout = 0.30,
        merger_epochs = 100,
        copies_per_frame = 5,
        seed = 0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        frames: Vec<Vec<f64>>,
        neurons: usize,
        baseline_dropout: f64,
        baseline_epochs: usize,
        models: usize,
        kernel_width: usize,
        merger_dropout: f64,
        merger_epochs: usize,
        copies_per_frame: usize,
        seed: u64,
    ) -> PyResult<(Self, HashMap<String, f64>)> {
        let imgs: Vec<GrayImage> = frames
            .into_iter()
            .map(image_from_pixels)
            .collect::<PyResult<_>>()?;
        let traversal = Traversal::from_frames("python", imgs);
        let config = SystemConfig {
            neurons,
            baseline_dropout,
            baseline_epochs,
            models,
            kernel_width,
            merger_dropout,
            merger_epochs,
            copies_per_frame,
            base_seed: seed,
            retain_latents: false,
        };
        let (system, report) = bmvr::train_system(&traversal, &config).map_err(to_py_err)?;
        let mut summary = HashMap::new();
        summary.insert("places".into(), report.places as f64);
        summary.insert("disagreement_rate".into(), report.disagreement_rate);
        summary.insert("merger_train_accuracy".into(), report.merger_train_accuracy);
        for (i, acc) in report.baseline_train_accuracy.iter().enumerate() {
            summary.insert(format!("baseline{i}_train_accuracy"), *acc);
            summary.insert(
                format!("baseline{i}_augmented_accuracy"),
                report.baseline_augmented_accuracy[i],
            );
        }
        Ok((PySystem { inner: system }, summary))
    }

    /// Predicts the place of one query frame; returns (place, confidence).
    fn predict(&self, pixels: Vec<f64>) -> PyResult<(usize, f64)> {
        let img = image_from_pixels(pixels)?;
        let (place, confidence, _) = self.inner.predict(&img).map_err(to_py_err)?;
        Ok((place, confidence))
    }

    /// Per-classifier score vectors plus the merger's final scores.
    fn scores(&self, pixels: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let img = image_from_pixels(pixels)?;
        let (_, _, stacked) = self.inner.predict(&img).map_err(to_py_err)?;
        Ok((0..stacked.models()).map(|m| stacked.row(m).to_vec()).collect())
    }

    fn save(&self, path: &str) -> PyResult<u64> {
        bmvr::save_system(&self.inner, Path::new(path)).map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PySystem {
            inner: bmvr::load_system(Path::new(path)).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn places(&self) -> usize {
        self.inner.places()
    }

    #[getter]
    fn models(&self) -> usize {
        self.inner.models()
    }

    fn __repr__(&self) -> String {
        format!(
            "System(places={}, models={}, neurons={})",
            self.inner.places(),
            self.inner.models(),
            self.inner.config().neurons
        )
    }
}

/// Generates `frames` synthetic filtered-noise frames as flat pixel lists.
#[pyfunction]
#[pyo3(signature = (frames, seed = 0))]
fn synthetic_traversal(frames: usize, seed: u64) -> Vec<Vec<f64>> {
    bmvr::synthetic_traversal(frames, seed)
        .frames()
        .iter()
        .map(|f| f.pixels().to_vec())
        .collect()
}

/// Applies the two-step augmentation (one random transform plus a random
/// horizontal flip) to a frame.
#[pyfunction]
#[pyo3(signature = (pixels, seed = 0))]
fn augment(pixels: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
    let img = image_from_pixels(pixels)?;
    let out = bmvr::augment_pipeline(&img, &mut Rng::new(seed));
    Ok(out.pixels().to_vec())
}

#[pymodule]
fn bmvr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_function(wrap_pyfunction!(synthetic_traversal, m)?)?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    m.add("IMAGE_WIDTH", bmvr::IMAGE_WIDTH)?;
    m.add("IMAGE_HEIGHT", bmvr::IMAGE_HEIGHT)?;
    m.add("IMAGE_PIXELS", bmvr::IMAGE_PIXELS)?;
    Ok(())
}
