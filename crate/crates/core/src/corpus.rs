//! Dataset manifests and the synthetic bark-like corpus.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{write_wav, AudioClip, AudioError, CANONICAL_SAMPLE_RATE};
use crate::evaluation::{Dimension, OrdinalLabel};
use crate::rng::XorShift64Star;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: duplicate event_id {event_id:?} on lines {first_line} and {second_line}")]
    DuplicateEvent {
        path: PathBuf,
        event_id: String,
        first_line: u64,
        second_line: u64,
    },
    #[error("{path}: line {line}: unknown {column} label {token:?}")]
    UnknownLabel {
        path: PathBuf,
        line: u64,
        column: &'static str,
        token: String,
    },
    #[error("{path}: bad header, expected path,event_id,arousal,valence[,split]")]
    BadHeader { path: PathBuf },
    #[error("synthetic corpus needs at least 6 events, got {0}")]
    TooFewEvents(usize),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// As written in the manifest; relative paths are relative to the manifest's directory.
    pub path: PathBuf,
    pub event_id: String,
    pub arousal: OrdinalLabel,
    pub valence: OrdinalLabel,
    pub split: Option<Split>,
}

impl ManifestEntry {
    pub fn label(&self, dim: Dimension) -> OrdinalLabel {
        match dim {
            Dimension::Arousal => self.arousal,
            Dimension::Valence => self.valence,
        }
    }

    pub fn resolved_path(&self, manifest_dir: &Path) -> PathBuf {
        if self.path.is_absolute() {
            self.path.clone()
        } else {
            manifest_dir.join(&self.path)
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses a `path,event_id,arousal,valence[,split]` CSV. Label tokens are
/// case-insensitive; arousal takes high/medium/low and valence takes
/// positive/neutral/negative.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_manifest(&text, path)
}

fn parse_label(
    token: &str,
    dim: Dimension,
    path: &Path,
    line: u64,
) -> Result<OrdinalLabel, CorpusError> {
    let lowered = token.trim().to_ascii_lowercase();
    let label = OrdinalLabel::ALL
        .into_iter()
        .find(|l| l.token(dim) == lowered);
    label.ok_or_else(|| CorpusError::UnknownLabel {
        path: path.to_path_buf(),
        line,
        column: dim.name(),
        token: token.to_string(),
    })
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let has_split = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["path", "event_id", "arousal", "valence"] => false,
        ["path", "event_id", "arousal", "valence", "split"] => true,
        _ => {
            return Err(CorpusError::BadHeader {
                path: path.to_path_buf(),
            })
        }
    };
    let width = if has_split { 5 } else { 4 };

    let mut entries = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| CorpusError::MalformedRow {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(CorpusError::MalformedRow {
                path: path.to_path_buf(),
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let event_id = record[1].to_string();
        if record[0].is_empty() || event_id.is_empty() {
            return Err(CorpusError::MalformedRow {
                path: path.to_path_buf(),
                line,
                message: "empty path or event_id".into(),
            });
        }
        if let Some(&first_line) = seen.get(&event_id) {
            return Err(CorpusError::DuplicateEvent {
                path: path.to_path_buf(),
                event_id,
                first_line,
                second_line: line,
            });
        }
        seen.insert(event_id.clone(), line);
        let split = if has_split && !record[4].is_empty() {
            Some(record[4].parse::<Split>().map_err(|message| CorpusError::MalformedRow {
                path: path.to_path_buf(),
                line,
                message,
            })?)
        } else {
            None
        };
        entries.push(ManifestEntry {
            path: PathBuf::from(&record[0]),
            event_id,
            arousal: parse_label(&record[2], Dimension::Arousal, path, line)?,
            valence: parse_label(&record[3], Dimension::Valence, path, line)?,
            split,
        });
    }
    Ok(entries)
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> Result<String, CorpusError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["path", "event_id", "arousal", "valence", "split"])?;
    for e in entries {
        writer.write_record([
            e.path.to_string_lossy().as_ref(),
            &e.event_id,
            e.arousal.token(Dimension::Arousal),
            e.valence.token(Dimension::Valence),
            e.split.map_or("", Split::name),
        ])?;
    }
    let bytes = writer.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV writer emits UTF-8"))
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, manifest_to_string(entries)?).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_events: usize,
    pub sample_rate: u32,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_events: 90,
            sample_rate: CANONICAL_SAMPLE_RATE,
            min_duration_s: 0.2,
            max_duration_s: 1.5,
        }
    }
}

/// Pulse repetition rate range (Hz) for an arousal level.
pub fn pulse_rate_range(arousal: OrdinalLabel) -> (f64, f64) {
    match arousal {
        OrdinalLabel::Low => (4.0, 8.0),
        OrdinalLabel::Medium => (12.0, 18.0),
        OrdinalLabel::High => (25.0, 40.0),
    }
}

/// Fundamental frequency range (Hz) for a valence level.
pub fn fundamental_range(valence: OrdinalLabel) -> (f64, f64) {
    match valence {
        OrdinalLabel::Low => (150.0, 250.0),
        OrdinalLabel::Medium => (350.0, 500.0),
        OrdinalLabel::High => (700.0, 1000.0),
    }
}

fn peak_level(arousal: OrdinalLabel) -> f64 {
    match arousal {
        OrdinalLabel::Low => 0.25,
        OrdinalLabel::Medium => 0.45,
        OrdinalLabel::High => 0.7,
    }
}

/// Labels of event `index`: round-robin over the nine (arousal, valence) cells.
pub fn synth_labels(index: usize) -> (OrdinalLabel, OrdinalLabel) {
    let cell = index % 9;
    (OrdinalLabel::ALL[cell / 3], OrdinalLabel::ALL[cell % 3])
}

const HARMONICS: usize = 4;
const PULSE_DUTY: f64 = 0.5;
const LEAD_SILENCE_S: f64 = 0.05;
/// Broadband noise level relative to the tonal component (Negative valence).
const NOISE_DB: f64 = -10.0;

/// One synthetic vocalisation: a train of Hann-shaped harmonic pulses.
/// Arousal sets the repetition rate and level, valence the fundamental;
/// Negative valence adds white noise under the pulse envelope.
pub fn synth_event(
    rng: &mut XorShift64Star,
    arousal: OrdinalLabel,
    valence: OrdinalLabel,
    cfg: &SynthConfig,
) -> Vec<f64> {
    let sr = cfg.sample_rate as f64;
    let duration = rng.uniform(cfg.min_duration_s, cfg.max_duration_s);
    let (r_lo, r_hi) = pulse_rate_range(arousal);
    let rate = rng.uniform(r_lo, r_hi);
    let (f_lo, f_hi) = fundamental_range(valence);
    let f0 = rng.uniform(f_lo, f_hi);
    let level = peak_level(arousal) * rng.uniform(0.85, 1.0);
    let phase0 = rng.uniform(0.0, 1.0);

    let lead = (LEAD_SILENCE_S * sr) as usize;
    let body = (duration * sr) as usize;
    let period = sr / rate;
    let pulse_len = PULSE_DUTY * period;
    let envelope = |i: usize| -> f64 {
        let pos = (i as f64) % period;
        if pos < pulse_len {
            let x = pos / pulse_len;
            0.5 - 0.5 * (std::f64::consts::TAU * x).cos()
        } else {
            0.0
        }
    };
    let amp_norm: f64 = (1..=HARMONICS).map(|k| 1.0 / k as f64).sum();
    let mut tone: Vec<f64> = (0..body)
        .map(|i| {
            let t = i as f64 / sr;
            let s: f64 = (1..=HARMONICS)
                .filter(|&k| k as f64 * f0 < sr / 2.0)
                .map(|k| (std::f64::consts::TAU * (k as f64 * f0 * t + phase0 * k as f64)).sin() / k as f64)
                .sum();
            envelope(i) * s / amp_norm
        })
        .collect();

    if valence == OrdinalLabel::Low {
        let tone_rms = (tone.iter().map(|s| s * s).sum::<f64>() / body.max(1) as f64).sqrt();
        let env_rms = ((0..body).map(|i| envelope(i).powi(2)).sum::<f64>() / body.max(1) as f64).sqrt();
        let gain = if env_rms > 0.0 {
            tone_rms * 10f64.powf(NOISE_DB / 20.0) / env_rms
        } else {
            0.0
        };
        for (i, s) in tone.iter_mut().enumerate() {
            *s += gain * envelope(i) * rng.normal();
        }
    }

    let peak = tone.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let scale = if peak > 0.0 { level / peak } else { 0.0 };
    let mut out = vec![0.0; lead];
    out.extend(tone.iter().map(|s| s * scale));
    out.extend(std::iter::repeat_n(0.0, lead));
    out
}

/// Writes `synth_NNNN.wav` files plus `manifest.csv` into `out_dir` and
/// returns the manifest entries (paths relative to `out_dir`).
pub fn synth_corpus(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, CorpusError> {
    if cfg.n_events < 6 {
        return Err(CorpusError::TooFewEvents(cfg.n_events));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut rng = XorShift64Star::new(cfg.seed);
    let mut entries = Vec::with_capacity(cfg.n_events);
    for i in 0..cfg.n_events {
        let (arousal, valence) = synth_labels(i);
        let samples = synth_event(&mut rng, arousal, valence, cfg);
        let name = format!("synth_{i:04}.wav");
        let clip = AudioClip::new(samples, cfg.sample_rate)?;
        write_wav(out_dir.join(&name), &clip)?;
        entries.push(ManifestEntry {
            path: PathBuf::from(name),
            event_id: format!("synth_{i:04}"),
            arousal,
            valence,
            split: None,
        });
    }
    write_manifest(out_dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}
