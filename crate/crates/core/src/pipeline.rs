//! Manifest-driven feature extraction and model evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio_io::{read_wav, resample, AudioClip};
use crate::corpus::{ManifestEntry, Split};
use crate::evaluation::{
    calibrate_boundaries, class_histograms, decode, tap, Boundaries, ConfusionMatrix, Dimension,
    EvalError, OrdinalLabel, HISTOGRAM_BINS,
};
use crate::features::{FeatureConfig, MelExtractor, MelSpectrogram};
use crate::models::{mean_score, predict_scalar, Checkpoint, LabeledExample, ModelKind};
use crate::segmentation::{frames_for_event, Frame, SegmentationConfig};
use crate::Error;

/// Reads a WAV file and brings it to the feature sample rate.
pub fn load_clip(path: &Path, sample_rate_hz: u32) -> Result<AudioClip, Error> {
    let clip = read_wav(path)?;
    Ok(resample(&clip, sample_rate_hz)?)
}

/// All frames of one annotated file, tagged with `event_id`.
pub fn load_event_frames(
    path: &Path,
    event_id: &str,
    seg: &SegmentationConfig,
    features: &FeatureConfig,
) -> Result<Vec<Frame>, Error> {
    let clip = load_clip(path, features.sample_rate_hz)?;
    Ok(frames_for_event(&clip, seg, event_id)?)
}

/// Log-Mel features of every frame of one event, with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFeatures {
    pub event_id: String,
    pub arousal: OrdinalLabel,
    pub valence: OrdinalLabel,
    pub split: Option<Split>,
    pub frames: Vec<MelSpectrogram>,
}

impl EventFeatures {
    pub fn label(&self, dim: Dimension) -> OrdinalLabel {
        match dim {
            Dimension::Arousal => self.arousal,
            Dimension::Valence => self.valence,
        }
    }
}

pub fn featurize_entry(
    entry: &ManifestEntry,
    manifest_dir: &Path,
    seg: &SegmentationConfig,
    extractor: &MelExtractor,
) -> Result<EventFeatures, Error> {
    let frames = load_event_frames(
        &entry.resolved_path(manifest_dir),
        &entry.event_id,
        seg,
        extractor.config(),
    )?;
    let frames = frames
        .iter()
        .map(|f| extractor.log_mel(&f.samples))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EventFeatures {
        event_id: entry.event_id.clone(),
        arousal: entry.arousal,
        valence: entry.valence,
        split: entry.split,
        frames,
    })
}

pub fn featurize_manifest(
    entries: &[ManifestEntry],
    manifest_dir: &Path,
    seg: &SegmentationConfig,
    features: &FeatureConfig,
) -> Result<Vec<EventFeatures>, Error> {
    seg.validate()?;
    let extractor = MelExtractor::new(features)?;
    entries
        .iter()
        .map(|e| featurize_entry(e, manifest_dir, seg, &extractor))
        .collect()
}

/// Events on one side of the split. `None` selects every event.
pub fn select_split(events: &[EventFeatures], split: Option<Split>) -> Vec<EventFeatures> {
    events
        .iter()
        .filter(|e| split.is_none() || e.split == split)
        .cloned()
        .collect()
}

/// Flattens events into frame-level training examples; every frame inherits
/// its event's label.
pub fn training_examples(events: &[EventFeatures], dim: Dimension) -> Vec<LabeledExample> {
    events
        .iter()
        .flat_map(|e| {
            e.frames.iter().map(move |f| LabeledExample {
                features: f.clone(),
                label: e.label(dim),
            })
        })
        .collect()
}

/// Per-class histogram data of one granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub bin_edges: Vec<f64>,
    pub histograms: std::collections::BTreeMap<String, Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub events: usize,
    pub frames: usize,
}

/// Metrics of one model on one set of events. A TAP field is `null` when the
/// reference labels contain no High or Low instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dimension: Dimension,
    pub model: ModelKind,
    pub split: String,
    pub boundaries: Boundaries,
    pub frame_accuracy: f64,
    pub event_accuracy: f64,
    pub tap_percent: Option<f64>,
    pub event_tap_percent: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub event_confusion: ConfusionMatrix,
    /// Frame-level prediction histograms keyed by true class.
    pub histograms: std::collections::BTreeMap<String, Vec<u64>>,
    pub bin_edges: Vec<f64>,
    pub event_histograms: HistogramReport,
    pub counts: EvalCounts,
}

fn optional_tap(cm: &ConfusionMatrix) -> Result<Option<f64>, EvalError> {
    match tap(cm) {
        Ok(v) => Ok(Some(v)),
        Err(EvalError::UndefinedTap) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Frame scores and event means of `ckpt` over `events`.
pub fn score_events(
    ckpt: &Checkpoint,
    events: &[EventFeatures],
) -> Result<Vec<(Vec<f64>, f64)>, Error> {
    events
        .iter()
        .map(|e| {
            let scores = e
                .frames
                .iter()
                .map(|f| predict_scalar(ckpt, f))
                .collect::<Result<Vec<_>, _>>()?;
            let mean = mean_score(&scores)?;
            Ok((scores, mean))
        })
        .collect()
}

/// Decodes frame and event predictions with `boundaries` and tabulates
/// accuracy, TAP, confusion counts and per-class histograms.
pub fn evaluate(
    ckpt: &Checkpoint,
    events: &[EventFeatures],
    boundaries: &Boundaries,
    split: &str,
) -> Result<EvalReport, Error> {
    let scored = score_events(ckpt, events)?;
    evaluate_scores(ckpt.dimension, ckpt.kind, events, &scored, boundaries, split)
}

pub fn evaluate_scores(
    dimension: Dimension,
    model: ModelKind,
    events: &[EventFeatures],
    scored: &[(Vec<f64>, f64)],
    boundaries: &Boundaries,
    split: &str,
) -> Result<EvalReport, Error> {
    let has_frames = events.iter().any(|e| !e.frames.is_empty());
    if events.is_empty() || !has_frames {
        return Err(EvalError::Empty.into());
    }
    let mut frame_scores = Vec::new();
    let mut frame_truth = Vec::new();
    let mut event_scores = Vec::new();
    let mut event_truth = Vec::new();
    for (e, (scores, mean)) in events.iter().zip(scored) {
        let label = e.label(dimension);
        frame_scores.extend_from_slice(scores);
        frame_truth.extend(std::iter::repeat_n(label, scores.len()));
        event_scores.push(*mean);
        event_truth.push(label);
    }
    let frame_pred: Vec<_> = frame_scores.iter().map(|&v| decode(v, boundaries)).collect();
    let event_pred: Vec<_> = event_scores.iter().map(|&v| decode(v, boundaries)).collect();
    let confusion = ConfusionMatrix::from_labels(&frame_pred, &frame_truth)?;
    let event_confusion = ConfusionMatrix::from_labels(&event_pred, &event_truth)?;

    let names = |truth: &[OrdinalLabel]| -> Vec<String> {
        truth.iter().map(|l| l.token(dimension).to_string()).collect()
    };
    let frame_hist = class_histograms(&frame_scores, &names(&frame_truth), HISTOGRAM_BINS)?;
    let event_hist = class_histograms(&event_scores, &names(&event_truth), HISTOGRAM_BINS)?;

    Ok(EvalReport {
        dimension,
        model,
        split: split.to_string(),
        boundaries: *boundaries,
        frame_accuracy: confusion.accuracy().unwrap_or(0.0),
        event_accuracy: event_confusion.accuracy().unwrap_or(0.0),
        tap_percent: optional_tap(&confusion)?,
        event_tap_percent: optional_tap(&event_confusion)?,
        confusion,
        event_confusion,
        histograms: frame_hist.histograms,
        bin_edges: frame_hist.bin_edges,
        event_histograms: HistogramReport {
            bin_edges: event_hist.bin_edges,
            histograms: event_hist.histograms,
        },
        counts: EvalCounts {
            events: events.len(),
            frames: frame_scores.len(),
        },
    })
}

/// Re-derives boundaries from a model's frame predictions on `events`.
pub fn recalibrate(ckpt: &Checkpoint, events: &[EventFeatures]) -> Result<Boundaries, Error> {
    let scored = score_events(ckpt, events)?;
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (e, (scores, _)) in events.iter().zip(&scored) {
        preds.extend_from_slice(scores);
        labels.extend(std::iter::repeat_n(e.label(ckpt.dimension), scores.len()));
    }
    Ok(calibrate_boundaries(&preds, &labels)?)
}
