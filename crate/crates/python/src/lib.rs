//! Python bindings for the barkspace pipeline.
//!
//! Structured results (manifests, reports, points) come back as plain
//! dicts and lists so callers need nothing beyond the standard library.

use std::path::{Path, PathBuf};

use barkspace::audio_io::{AudioClip, CANONICAL_SAMPLE_RATE};
use barkspace::corpus::{self, SynthConfig};
use barkspace::evaluation::{self, Boundaries, ConfusionMatrix, Dimension, OrdinalLabel};
use barkspace::features::{FeatureConfig, MelExtractor};
use barkspace::models::{self, ModelKind, ModelSetup, TrainConfig};
use barkspace::pipeline;
use barkspace::projection::{self, EmotionPoint};
use barkspace::segmentation::{self, SegmentationConfig};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

create_exception!(barkspace_py, BarkspaceError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    BarkspaceError::new_err(e.to_string())
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(value_err)
}

fn labels(tokens: Vec<String>) -> PyResult<Vec<OrdinalLabel>> {
    tokens.iter().map(|t| parse(t)).collect()
}

fn manifest_rows<'py>(py: Python<'py>, entries: &[corpus::ManifestEntry]) -> PyResult<Bound<'py, PyAny>> {
    let rows: Vec<serde_json::Value> = entries
        .iter()
        .map(|e| {
            serde_json::json!({
                "path": e.path,
                "event_id": e.event_id,
                "arousal": e.arousal.token(Dimension::Arousal),
                "valence": e.valence.token(Dimension::Valence),
                "split": e.split.map(|s| s.name()),
            })
        })
        .collect();
    to_py(py, &rows)
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// A trained model together with its decision boundaries.
#[pyclass(module = "barkspace_py", name = "Checkpoint")]
pub struct PyCheckpoint {
    inner: models::Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: models::load_checkpoint(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: models::checkpoint_from_bytes(data).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        models::save_checkpoint(&self.inner, path).map_err(err)
    }

    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        models::checkpoint_to_bytes(&self.inner).map_err(err)
    }

    #[getter]
    fn dimension(&self) -> &'static str {
        self.inner.dimension.name()
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// `(t_low, t_high)`.
    #[getter]
    fn boundaries(&self) -> PyResult<(f64, f64)> {
        let b = self.inner.boundaries().map_err(err)?;
        Ok((b.t_low, b.t_high))
    }

    #[getter]
    fn neutral_point(&self) -> PyResult<f64> {
        Ok(self.inner.boundaries().map_err(err)?.neutral_point())
    }

    /// Scalar score of one log-Mel matrix (rows are Mel bands).
    fn predict_features(&self, features: Vec<Vec<f64>>) -> PyResult<f64> {
        let n_mels = features.len();
        let n_time = features.first().map_or(0, Vec::len);
        if features.iter().any(|r| r.len() != n_time) {
            return Err(value_err("feature rows differ in length"));
        }
        let mel = barkspace::features::MelSpectrogram {
            n_mels,
            n_time,
            values: features.into_iter().flatten().collect(),
        };
        models::predict_scalar(&self.inner, &mel).map_err(err)
    }

    /// Mean score over every frame of a WAV file treated as one event.
    fn predict_wav(&self, path: PathBuf) -> PyResult<f64> {
        let frames = pipeline::load_event_frames(&path, "event", &self.inner.segmentation, &self.inner.features)
            .map_err(err)?;
        models::predict_event(&self.inner, &frames).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Checkpoint(kind={:?}, dimension={:?})", self.kind(), self.dimension())
    }
}

/// Writes a synthetic labelled corpus and returns its manifest rows.
#[pyfunction]
#[pyo3(signature = (out_dir, n_events = 90, seed = 42))]
fn synth_corpus<'py>(py: Python<'py>, out_dir: PathBuf, n_events: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let cfg = SynthConfig {
        seed,
        n_events,
        ..SynthConfig::default()
    };
    let entries = corpus::synth_corpus(&cfg, &out_dir).map_err(err)?;
    manifest_rows(py, &entries)
}

#[pyfunction]
fn load_manifest<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    manifest_rows(py, &corpus::load_manifest(path).map_err(err)?)
}

/// Train/test event ids.
#[pyfunction]
#[pyo3(signature = (event_ids, train_fraction = 0.8, seed = 42))]
fn event_level_split(event_ids: Vec<String>, train_fraction: f64, seed: u64) -> PyResult<(Vec<String>, Vec<String>)> {
    evaluation::event_level_split(&event_ids, train_fraction, seed).map_err(err)
}

/// Mono samples of a WAV file at the canonical rate.
#[pyfunction]
#[pyo3(signature = (path, sample_rate = CANONICAL_SAMPLE_RATE))]
fn load_audio(path: PathBuf, sample_rate: u32) -> PyResult<Vec<f64>> {
    Ok(pipeline::load_clip(&path, sample_rate).map_err(err)?.samples)
}

/// Non-silent events as dicts with `event_id`, `start_sample`, `end_sample`.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate = CANONICAL_SAMPLE_RATE, top_db = None))]
fn segment<'py>(
    py: Python<'py>,
    samples: Vec<f64>,
    sample_rate: u32,
    top_db: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = SegmentationConfig::default();
    cfg.top_db = top_db.unwrap_or(cfg.top_db);
    let clip = AudioClip::new(samples, sample_rate).map_err(value_err)?;
    let spans: Vec<serde_json::Value> = segmentation::detect_nonsilent(&clip, &cfg)
        .map_err(err)?
        .into_iter()
        .map(|s| {
            serde_json::json!({
                "event_id": s.event_id,
                "start_sample": s.start_sample,
                "end_sample": s.end_sample,
            })
        })
        .collect();
    to_py(py, &spans)
}

/// Log-Mel matrix of one frame, rows are Mel bands, values in `[0, 1]`.
#[pyfunction]
fn log_mel(samples: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let mel = MelExtractor::new(&FeatureConfig::default())
        .map_err(err)?
        .log_mel(&samples)
        .map_err(value_err)?;
    Ok(mel.values.chunks(mel.n_time).map(<[f64]>::to_vec).collect())
}

#[pyfunction]
fn decode(value: f64, t_low: f64, t_high: f64) -> &'static str {
    evaluation::decode(value, &Boundaries { t_low, t_high }).name()
}

/// Percentage of High/Low instances predicted as the opposite extreme.
/// `confusion[true][predicted]`, classes ordered low, medium, high.
#[pyfunction]
fn tap(confusion: [[u64; 3]; 3]) -> PyResult<f64> {
    evaluation::tap(&ConfusionMatrix { counts: confusion }).map_err(err)
}

/// Thresholds maximising accuracy of `predictions` against `labels`.
#[pyfunction]
fn calibrate_boundaries(predictions: Vec<f64>, labels: Vec<String>) -> PyResult<(f64, f64)> {
    let b = evaluation::calibrate_boundaries(&predictions, &self::labels(labels)?).map_err(err)?;
    Ok((b.t_low, b.t_high))
}

fn training_entries(path: &Path) -> PyResult<Vec<corpus::ManifestEntry>> {
    let entries = corpus::load_manifest(path).map_err(err)?;
    Ok(if entries.iter().any(|e| e.split.is_some()) {
        entries.into_iter().filter(|e| e.split == Some(corpus::Split::Train)).collect()
    } else {
        entries
    })
}

/// Trains on the manifest's train split (or every row when it has none).
#[pyfunction]
#[pyo3(signature = (manifest, dimension, model = "siamese", epochs = 30, seed = 42, learning_rate = 1e-3, batch_size = 32, pairs_per_epoch = None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    manifest: PathBuf,
    dimension: &str,
    model: &str,
    epochs: usize,
    seed: u64,
    learning_rate: f64,
    batch_size: usize,
    pairs_per_epoch: Option<usize>,
) -> PyResult<PyCheckpoint> {
    let kind: ModelKind = parse(model)?;
    let cfg = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        seed,
        pairs_per_epoch,
        dimension: parse::<Dimension>(dimension)?,
    };
    let entries = training_entries(&manifest)?;
    let setup = ModelSetup::new(FeatureConfig::default(), SegmentationConfig::default());
    let dir = manifest_dir(&manifest);
    let trained = py
        .detach(|| -> Result<_, barkspace::Error> {
            let events = pipeline::featurize_manifest(&entries, &dir, &setup.segmentation, &setup.features)?;
            let examples = pipeline::training_examples(&events, cfg.dimension);
            Ok(models::train(kind, &examples, &cfg, &setup, |_, _| {})?)
        })
        .map_err(err)?;
    Ok(PyCheckpoint {
        inner: trained.checkpoint,
    })
}

/// Evaluation report for one split (`"train"`, `"test"` or `"all"`).
#[pyfunction]
#[pyo3(signature = (checkpoint, manifest, split = "test"))]
fn evaluate<'py>(
    py: Python<'py>,
    checkpoint: &PyCheckpoint,
    manifest: PathBuf,
    split: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let filter = match split {
        "all" => None,
        s => Some(parse::<corpus::Split>(s)?),
    };
    let ckpt = &checkpoint.inner;
    let entries: Vec<_> = corpus::load_manifest(&manifest)
        .map_err(err)?
        .into_iter()
        .filter(|e| filter.is_none() || e.split == filter)
        .collect();
    let dir = manifest_dir(&manifest);
    let report = py
        .detach(|| -> Result<_, barkspace::Error> {
            let events = pipeline::featurize_manifest(&entries, &dir, &ckpt.segmentation, &ckpt.features)?;
            let b = ckpt.boundaries()?;
            pipeline::evaluate(ckpt, &events, &b, split)
        })
        .map_err(err)?;
    to_py(py, &report)
}

/// One point per manifest row, recentred on each model's neutral point.
#[pyfunction]
fn project<'py>(
    py: Python<'py>,
    arousal: &PyCheckpoint,
    valence: &PyCheckpoint,
    manifest: PathBuf,
) -> PyResult<Bound<'py, PyAny>> {
    let entries = corpus::load_manifest(&manifest).map_err(err)?;
    let dir = manifest_dir(&manifest);
    let (a, v) = (&arousal.inner, &valence.inner);
    let points = py
        .detach(|| -> Result<Vec<EmotionPoint>, barkspace::Error> {
            entries
                .iter()
                .map(|e| {
                    let frames =
                        pipeline::load_event_frames(&e.resolved_path(&dir), &e.event_id, &a.segmentation, &a.features)?;
                    Ok(projection::project_event(a, v, &frames)?)
                })
                .collect()
        })
        .map_err(err)?;
    to_py(py, &points)
}

#[pyfunction]
fn quadrant(valence: f64, arousal: f64) -> &'static str {
    projection::Quadrant::from_coords(valence, arousal).name()
}

#[pymodule]
fn barkspace_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BarkspaceError", m.py().get_type::<BarkspaceError>())?;
    m.add("SAMPLE_RATE", CANONICAL_SAMPLE_RATE)?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(load_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(event_level_split, m)?)?;
    m.add_function(wrap_pyfunction!(load_audio, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(log_mel, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(tap, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_boundaries, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(quadrant, m)?)?;
    Ok(())
}
