//! Energy-based event detection and fixed-length framing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::AudioClip;

const RMS_EPSILON: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("cannot segment an empty clip")]
    EmptyClip,
    #[error("cannot frame an empty segment")]
    EmptySegment,
    #[error("invalid segmentation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Windows quieter than `peak - top_db` are silence.
    pub top_db: f64,
    pub target_len: usize,
    pub stride: usize,
    pub detect_frame_len: usize,
    pub detect_hop: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            top_db: 20.0,
            target_len: 5120,
            stride: 2560,
            detect_frame_len: 1024,
            detect_hop: 256,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        let bad = |m: &str| Err(SegmentError::InvalidConfig(m.to_string()));
        if !(self.top_db > 0.0 && self.top_db.is_finite()) {
            return bad("top_db must be positive");
        }
        if self.target_len == 0 || self.stride == 0 || self.stride > self.target_len {
            return bad("need 0 < stride <= target_len");
        }
        if self.detect_frame_len == 0 || self.detect_hop == 0 {
            return bad("detector window and hop must be positive");
        }
        if self.detect_hop > self.detect_frame_len {
            return bad("detect_hop must not exceed detect_frame_len");
        }
        Ok(())
    }
}

/// A continuous non-silent stretch of a clip, `[start_sample, end_sample)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSegment {
    pub event_id: String,
    pub start_sample: usize,
    pub end_sample: usize,
    pub samples: Vec<f64>,
}

impl EventSegment {
    pub fn len(&self) -> usize {
        self.end_sample - self.start_sample
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Exactly `target_len` samples of one event.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub event_id: String,
    pub frame_index: usize,
    pub samples: Vec<f64>,
}

/// Per-window RMS level in dB, windows starting every `hop` samples.
/// The last window may run past the clip end and is then truncated.
fn window_levels(samples: &[f64], frame_len: usize, hop: usize) -> Vec<(usize, usize, f64)> {
    let len = samples.len();
    let n_windows = if len <= frame_len {
        1
    } else {
        1 + (len - frame_len).div_ceil(hop)
    };
    (0..n_windows)
        .map(|w| {
            let start = w * hop;
            let end = (start + frame_len).min(len);
            let window = &samples[start..end];
            let mean_sq = window.iter().map(|s| s * s).sum::<f64>() / window.len() as f64;
            (start, end, 20.0 * (mean_sq.sqrt() + RMS_EPSILON).log10())
        })
        .collect()
}

/// Non-silent segments, ids `event_0000`, `event_0001`, ...
pub fn detect_nonsilent(
    clip: &AudioClip,
    cfg: &SegmentationConfig,
) -> Result<Vec<EventSegment>, SegmentError> {
    detect_nonsilent_named(clip, cfg, "event")
}

/// As [`detect_nonsilent`], with ids `{prefix}_{index:04}`.
///
/// A window is active when its RMS level exceeds `max_level - top_db`.
/// Runs of active windows become one segment; runs whose sample spans
/// overlap or touch (possible because windows overlap) are merged too.
pub fn detect_nonsilent_named(
    clip: &AudioClip,
    cfg: &SegmentationConfig,
    prefix: &str,
) -> Result<Vec<EventSegment>, SegmentError> {
    cfg.validate()?;
    if clip.is_empty() {
        return Err(SegmentError::EmptyClip);
    }
    let levels = window_levels(&clip.samples, cfg.detect_frame_len, cfg.detect_hop);
    let peak = levels
        .iter()
        .map(|&(_, _, db)| db)
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = peak - cfg.top_db;

    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for &(start, end, db) in &levels {
        if db > threshold {
            current = Some(match current {
                Some((s, _)) => (s, end),
                None => (start, end),
            });
        } else if let Some(span) = current.take() {
            spans.push(span);
        }
    }
    spans.extend(current);

    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    for (s, e) in spans {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }

    Ok(merged
        .into_iter()
        .enumerate()
        .map(|(i, (start, end))| EventSegment {
            event_id: format!("{prefix}_{i:04}"),
            start_sample: start,
            end_sample: end,
            samples: clip.samples[start..end].to_vec(),
        })
        .collect())
}

/// Start offsets of the frames cut from a segment of `len` samples.
/// Shorter segments yield the single offset 0 (the frame is padded).
pub fn frame_offsets(len: usize, target_len: usize, stride: usize) -> Vec<usize> {
    if len <= target_len {
        return vec![0];
    }
    let mut offsets: Vec<usize> = (0..)
        .map(|k| k * stride)
        .take_while(|&o| o + target_len <= len)
        .collect();
    let last_end = offsets.last().map_or(0, |&o| o + target_len);
    if last_end != len {
        offsets.push(len - target_len);
    }
    offsets
}

/// Normalises a segment to `target_len`-sample frames: short segments are
/// zero-padded symmetrically (odd remainder on the right), long ones are cut
/// with a sliding window plus an end-aligned frame for any tail remainder.
pub fn frame_segment(
    seg: &EventSegment,
    cfg: &SegmentationConfig,
) -> Result<Vec<Frame>, SegmentError> {
    cfg.validate()?;
    if seg.samples.is_empty() {
        return Err(SegmentError::EmptySegment);
    }
    let len = seg.samples.len();
    let target = cfg.target_len;
    if len < target {
        let d = target - len;
        let left = d / 2;
        let mut samples = vec![0.0; target];
        samples[left..left + len].copy_from_slice(&seg.samples);
        return Ok(vec![Frame {
            event_id: seg.event_id.clone(),
            frame_index: 0,
            samples,
        }]);
    }
    Ok(frame_offsets(len, target, cfg.stride)
        .into_iter()
        .enumerate()
        .map(|(i, off)| Frame {
            event_id: seg.event_id.clone(),
            frame_index: i,
            samples: seg.samples[off..off + target].to_vec(),
        })
        .collect())
}

/// Detects events in `clip` and frames every one of them, relabelling all
/// frames with `event_id`. Used when a whole file is one annotated event.
pub fn frames_for_event(
    clip: &AudioClip,
    cfg: &SegmentationConfig,
    event_id: &str,
) -> Result<Vec<Frame>, SegmentError> {
    let mut frames = Vec::new();
    for seg in detect_nonsilent(clip, cfg)? {
        frames.extend(frame_segment(&seg, cfg)?);
    }
    for (i, f) in frames.iter_mut().enumerate() {
        f.event_id = event_id.to_string();
        f.frame_index = i;
    }
    Ok(frames)
}
