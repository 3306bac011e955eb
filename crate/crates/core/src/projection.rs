//! Combines an arousal model and a valence model into points on the
//! arousal-valence plane.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::Dimension;
use crate::features::MelSpectrogram;
use crate::models::{predict_event, predict_event_features, Checkpoint, ModelError};
use crate::segmentation::Frame;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the {expected} slot was given a {found} model")]
    WrongDimension { expected: Dimension, found: Dimension },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown point format {0:?} (expected csv or json)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrant {
    Excited,
    Anxious,
    Relaxed,
    Despondent,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::Excited,
        Quadrant::Anxious,
        Quadrant::Relaxed,
        Quadrant::Despondent,
    ];

    /// Zero counts as non-negative on both axes.
    pub fn from_coords(valence: f64, arousal: f64) -> Self {
        match (arousal >= 0.0, valence >= 0.0) {
            (true, true) => Quadrant::Excited,
            (true, false) => Quadrant::Anxious,
            (false, true) => Quadrant::Relaxed,
            (false, false) => Quadrant::Despondent,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quadrant::Excited => "excited",
            Quadrant::Anxious => "anxious",
            Quadrant::Relaxed => "relaxed",
            Quadrant::Despondent => "despondent",
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quadrant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Quadrant::ALL
            .into_iter()
            .find(|q| q.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown quadrant {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionPoint {
    pub event_id: String,
    pub valence: f64,
    pub arousal: f64,
    pub quadrant: Quadrant,
    pub n_frames: usize,
}

impl EmotionPoint {
    /// Recentres raw event scores by each model's neutral point.
    pub fn from_scores(
        event_id: impl Into<String>,
        raw_valence: f64,
        raw_arousal: f64,
        valence_neutral: f64,
        arousal_neutral: f64,
        n_frames: usize,
    ) -> Self {
        let valence = raw_valence - valence_neutral;
        let arousal = raw_arousal - arousal_neutral;
        Self {
            event_id: event_id.into(),
            valence,
            arousal,
            quadrant: Quadrant::from_coords(valence, arousal),
            n_frames,
        }
    }
}

fn check_dimension(ckpt: &Checkpoint, expected: Dimension) -> Result<(), ProjectionError> {
    if ckpt.dimension != expected {
        return Err(ProjectionError::WrongDimension {
            expected,
            found: ckpt.dimension,
        });
    }
    Ok(())
}

/// Projects one event given its raw audio frames.
pub fn project_event(
    arousal_ckpt: &Checkpoint,
    valence_ckpt: &Checkpoint,
    frames: &[Frame],
) -> Result<EmotionPoint, ProjectionError> {
    check_dimension(arousal_ckpt, Dimension::Arousal)?;
    check_dimension(valence_ckpt, Dimension::Valence)?;
    let first = frames.first().ok_or(ModelError::EmptyEvent)?;
    let a = predict_event(arousal_ckpt, frames)?;
    let v = predict_event(valence_ckpt, frames)?;
    Ok(EmotionPoint::from_scores(
        first.event_id.clone(),
        v,
        a,
        valence_ckpt.boundaries()?.neutral_point(),
        arousal_ckpt.boundaries()?.neutral_point(),
        frames.len(),
    ))
}

/// Same as [`project_event`] for precomputed features. Both models must
/// share the feature settings the features were computed with.
pub fn project_event_features(
    arousal_ckpt: &Checkpoint,
    valence_ckpt: &Checkpoint,
    event_id: &str,
    features: &[MelSpectrogram],
) -> Result<EmotionPoint, ProjectionError> {
    check_dimension(arousal_ckpt, Dimension::Arousal)?;
    check_dimension(valence_ckpt, Dimension::Valence)?;
    let a = predict_event_features(arousal_ckpt, features)?;
    let v = predict_event_features(valence_ckpt, features)?;
    Ok(EmotionPoint::from_scores(
        event_id,
        v,
        a,
        valence_ckpt.boundaries()?.neutral_point(),
        arousal_ckpt.boundaries()?.neutral_point(),
        features.len(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    Csv,
    Json,
}

impl FromStr for PointFormat {
    type Err = ProjectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(PointFormat::Csv),
            "json" => Ok(PointFormat::Json),
            other => Err(ProjectionError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PointRow {
    event_id: String,
    valence: f64,
    arousal: f64,
    quadrant: Quadrant,
    n_frames: usize,
}

/// Floats use the shortest representation that parses back to the same
/// value, so export followed by parsing is exact.
pub fn points_to_string(points: &[EmotionPoint], format: PointFormat) -> Result<String, ProjectionError> {
    match format {
        PointFormat::Json => Ok(serde_json::to_string_pretty(points)? + "\n"),
        PointFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            // written by hand so an empty list still gets a header
            w.write_record(["event_id", "valence", "arousal", "quadrant", "n_frames"])?;
            for p in points {
                w.write_record([
                    p.event_id.clone(),
                    format!("{:?}", p.valence),
                    format!("{:?}", p.arousal),
                    p.quadrant.name().to_string(),
                    p.n_frames.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("CSV writer emits UTF-8"))
        }
    }
}

pub fn parse_points(text: &str, format: PointFormat) -> Result<Vec<EmotionPoint>, ProjectionError> {
    match format {
        PointFormat::Json => Ok(serde_json::from_str(text)?),
        PointFormat::Csv => {
            let mut r = csv::Reader::from_reader(text.as_bytes());
            r.deserialize::<PointRow>()
                .map(|row| {
                    let row = row?;
                    Ok(EmotionPoint {
                        event_id: row.event_id,
                        valence: row.valence,
                        arousal: row.arousal,
                        quadrant: row.quadrant,
                        n_frames: row.n_frames,
                    })
                })
                .collect()
        }
    }
}

pub fn export_points(
    points: &[EmotionPoint],
    path: impl AsRef<Path>,
    format: PointFormat,
) -> Result<(), ProjectionError> {
    let path = path.as_ref();
    fs::write(path, points_to_string(points, format)?).map_err(|source| ProjectionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_points(path: impl AsRef<Path>, format: PointFormat) -> Result<Vec<EmotionPoint>, ProjectionError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ProjectionError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_points(&text, format)
}
