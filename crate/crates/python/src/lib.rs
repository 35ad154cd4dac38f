//! Python bindings. Tensors cross the boundary as nested lists (2-D) or as a
//! flat list plus a shape.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use spikedisc::audio::{self, LogMel, LogMelConfig, MelConfig};
use spikedisc::discrimination::{cosine_distance_matrix, intra_inter_stats, BankMeta, FeatureBank};
use spikedisc::layers::HeadKind;
use spikedisc::loss::{self, RateTargets};
use spikedisc::models::{Checkpoint, ModelGraph};
use spikedisc::train::{self as tr, AvToySpec, ExperimentConfig};
use spikedisc::{Error, LifConfig, ResetMode, SurrogateSpec, Tensor};
use std::path::PathBuf;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Dimension(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(py_err)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let n = t.shape().first().copied().unwrap_or(0);
    (0..n).map(|i| t.row(i).to_vec()).collect()
}

fn reset_mode(name: &str) -> PyResult<ResetMode> {
    match name {
        "subtract" => Ok(ResetMode::Subtract),
        "zero" => Ok(ResetMode::Zero),
        "none" => Ok(ResetMode::None),
        other => Err(PyValueError::new_err(format!("unknown reset mode {other:?}"))),
    }
}

fn head_kind(name: &str) -> PyResult<HeadKind> {
    match name {
        "l2norm" => Ok(HeadKind::L2norm),
        "vanilla" => Ok(HeadKind::Vanilla),
        other => Err(PyValueError::new_err(format!("unknown head {other:?}"))),
    }
}

/// Spike trains (T × n) of LIF neurons driven by `inputs` (T × n) from rest.
#[pyfunction]
#[pyo3(signature = (inputs, beta=0.9, v_th=1.0, reset="subtract"))]
fn lif_sequence(inputs: Vec<Vec<f64>>, beta: f64, v_th: f64, reset: &str) -> PyResult<Vec<Vec<f64>>> {
    let cfg = LifConfig { beta, v_th, reset: reset_mode(reset)?, ..LifConfig::default() };
    cfg.validate().map_err(py_err)?;
    let spikes = spikedisc::neuron::lif_sequence(&matrix(&inputs)?, &cfg).map_err(py_err)?;
    Ok(rows(&spikes))
}

/// Surrogate pseudo-derivative at `u = v - v_th`.
#[pyfunction]
#[pyo3(signature = (u, kind="arctan", a=2.0, k=5.0, printed_form=false))]
fn surrogate_derivative(u: f64, kind: &str, a: f64, k: f64, printed_form: bool) -> PyResult<f64> {
    let mut spec = match kind {
        "arctan" => SurrogateSpec::arctan(a),
        "fast_sigmoid" => SurrogateSpec::fast_sigmoid(k),
        other => return Err(PyValueError::new_err(format!("unknown surrogate {other:?}"))),
    };
    spec.printed_form = printed_form;
    spec.validate().map_err(py_err)?;
    Ok(spec.derivative(u))
}

#[pyfunction]
#[pyo3(signature = (labels, classes, steps, r_correct=0.9, r_incorrect=0.1))]
fn spike_targets(labels: Vec<usize>, classes: usize, steps: usize, r_correct: f64, r_incorrect: f64) -> PyResult<Vec<Vec<f64>>> {
    let rt = RateTargets::new(r_correct, r_incorrect, steps).map_err(py_err)?;
    Ok(rows(&loss::spike_targets(&labels, &rt, classes).map_err(py_err)?))
}

#[pyfunction]
fn mse_count_loss(counts: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> PyResult<f64> {
    loss::mse_count_loss(&matrix(&counts)?, &matrix(&targets)?).map_err(py_err)
}

#[pyfunction]
fn hz_to_mel(f: f64) -> f64 {
    audio::hz_to_mel(f)
}

#[pyfunction]
#[pyo3(signature = (n_mels=64, n_fft=1024, sample_rate=16000, f_min=0.0, f_max=8000.0))]
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, f_min: f64, f_max: f64) -> PyResult<Vec<Vec<f64>>> {
    let fb = audio::mel_filterbank(&MelConfig { n_mels, f_min, f_max }, n_fft, sample_rate).map_err(py_err)?;
    Ok(rows(&fb))
}

/// Normalised log-mel spectrogram (mels × frames) with the default frontend.
#[pyfunction]
#[pyo3(signature = (wave, frames=None))]
fn log_mel(wave: Vec<f64>, frames: Option<usize>) -> PyResult<Vec<Vec<f64>>> {
    let cfg = LogMelConfig { frames, ..LogMelConfig::default() };
    let lm = LogMel::new(cfg).map_err(py_err)?;
    Ok(rows(&lm.normalized(&wave).map_err(py_err)?))
}

fn bank(features: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<FeatureBank> {
    let meta = BankMeta { modality: "python".into(), set: "custom".into(), head: HeadKind::L2norm, allow_degenerate: false };
    FeatureBank::new(matrix(&features)?, labels, meta).map_err(py_err)
}

/// Cosine distance matrix with rows sorted by class; returns (matrix, order).
#[pyfunction]
fn cosine_distances(features: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let m = cosine_distance_matrix(&bank(features, labels)?).map_err(py_err)?;
    let out = (0..m.n).map(|i| (0..m.n).map(|j| m.get(i, j)).collect()).collect();
    Ok((out, m.order))
}

/// Mean intra- and inter-class cosine distances and their ratio.
#[pyfunction]
fn separability<'py>(py: Python<'py>, features: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Bound<'py, PyDict>> {
    let m = cosine_distance_matrix(&bank(features, labels)?).map_err(py_err)?;
    let s = intra_inter_stats(&m).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("mean_intra", s.mean_intra)?;
    d.set_item("mean_inter", s.mean_inter)?;
    d.set_item("separability_ratio", s.separability_ratio)?;
    Ok(d)
}

/// Writes the synthetic audio-visual dataset; returns the sample count.
#[pyfunction]
#[pyo3(signature = (out, seed=0))]
fn generate_avtoy(out: PathBuf, seed: u64) -> PyResult<usize> {
    let manifest = tr::generate_avtoy(&AvToySpec::default(), seed, out).map_err(py_err)?;
    Ok(manifest.samples.len())
}

/// (epoch, lr, train_loss, train_acc, test_loss, test_acc).
type MetricsRow = (usize, f64, f64, f64, f64, f64);

fn metrics_rows(rows: &[tr::EpochMetrics]) -> Vec<MetricsRow> {
    rows.iter().map(|m| (m.epoch, m.lr, m.train_loss, m.train_acc, m.test_loss, m.test_acc)).collect()
}

/// Trains a unimodal network from a TOML configuration string and returns
/// one metrics row per epoch.
#[pyfunction]
fn train(config_toml: &str) -> PyResult<Vec<MetricsRow>> {
    let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(py_err)?;
    Ok(metrics_rows(&tr::train(&cfg).map_err(py_err)?.metrics))
}

/// Evaluates a checkpoint on both splits; returns {split: accuracy}.
#[pyfunction]
#[pyo3(signature = (checkpoint, data_dir, out_dir, export=None))]
fn evaluate<'py>(
    py: Python<'py>,
    checkpoint: PathBuf,
    data_dir: PathBuf,
    out_dir: PathBuf,
    export: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let reports = tr::evaluate(&checkpoint, &data_dir, &out_dir, export.as_deref()).map_err(py_err)?;
    let d = PyDict::new(py);
    for r in reports {
        d.set_item(r.split, r.accuracy)?;
    }
    Ok(d)
}

/// A built spiking network.
#[pyclass(name = "Model")]
struct PyModel {
    inner: ModelGraph,
}

#[pymethods]
impl PyModel {
    /// Builds the network described by a TOML configuration string.
    #[staticmethod]
    fn from_config(config_toml: &str) -> PyResult<Self> {
        let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(py_err)?;
        Ok(PyModel { inner: cfg.build_model().map_err(py_err)? })
    }

    /// Desk-scale visual network.
    #[staticmethod]
    #[pyo3(signature = (head="l2norm", seed=0))]
    fn visual(head: &str, seed: u64) -> PyResult<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.network.head = head_kind(head)?;
        cfg.seed = seed;
        Ok(PyModel { inner: cfg.build_model().map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel { inner: Checkpoint::load(path).map_err(py_err)?.model })
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    fn layers(&self) -> Vec<String> {
        self.inner.layer_listing()
    }

    /// Evaluation-mode forward pass on a batch given as flat data plus shape
    /// (batch first). Returns a dict with spike `counts`, `logits` and, for the
    /// L2 head, unit-norm `embeddings`.
    #[pyo3(signature = (data, shape, steps=8))]
    fn forward<'py>(&self, py: Python<'py>, data: Vec<f64>, shape: Vec<usize>, steps: usize) -> PyResult<Bound<'py, PyDict>> {
        let x = Tensor::new(shape, data).map_err(py_err)?;
        let out = self.inner.forward(&[x], steps).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("counts", rows(&out.counts))?;
        d.set_item("logits", rows(&out.logits))?;
        if let Some(e) = &out.normalized {
            d.set_item("embeddings", rows(e))?;
        }
        d.set_item("degenerate", out.degenerate)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({}, {} parameters, {} features, {} classes)",
            self.inner.spec.name,
            self.inner.parameter_count(),
            self.inner.feature_dim(),
            self.inner.classes()
        )
    }
}

#[pymodule]
fn spikedisc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(lif_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(spike_targets, m)?)?;
    m.add_function(wrap_pyfunction!(mse_count_loss, m)?)?;
    m.add_function(wrap_pyfunction!(hz_to_mel, m)?)?;
    m.add_function(wrap_pyfunction!(mel_filterbank, m)?)?;
    m.add_function(wrap_pyfunction!(log_mel, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_distances, m)?)?;
    m.add_function(wrap_pyfunction!(separability, m)?)?;
    m.add_function(wrap_pyfunction!(generate_avtoy, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<PyModel>()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_map_to_variants() {
        assert_eq!(reset_mode("zero").unwrap(), ResetMode::Zero);
        assert_eq!(head_kind("vanilla").unwrap(), HeadKind::Vanilla);
        assert!(reset_mode("soft").is_err());
        assert!(head_kind("cosine").is_err());
    }

    #[test]
    fn nested_lists_round_trip() {
        let data = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let t = matrix(&data).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(rows(&t), data);
        assert!(matrix(&[vec![1.0], vec![2.0, 3.0]]).is_err());
    }

    #[test]
    fn lif_binding_matches_core() {
        let spikes = lif_sequence(vec![vec![0.6], vec![0.6], vec![0.6]], 0.9, 1.0, "subtract").unwrap();
        assert_eq!(spikes, vec![vec![0.0], vec![1.0], vec![0.0]]);
    }
}
