//! Log-Mel spectrogram front end.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::CANONICAL_SAMPLE_RATE;
use crate::segmentation::Frame;

const POWER_EPSILON: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("frame has {len} samples, fewer than n_fft = {n_fft}")]
    FrameTooShort { len: usize, n_fft: usize },
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate_hz: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// `None` means the Nyquist frequency.
    pub fmax: Option<f64>,
    /// Dynamic range kept below the per-spectrogram maximum, in dB (sign ignored).
    pub db_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: CANONICAL_SAMPLE_RATE,
            n_fft: 512,
            hop: 128,
            n_mels: 64,
            fmin: 0.0,
            fmax: None,
            db_floor: -80.0,
        }
    }
}

impl FeatureConfig {
    pub fn nyquist(&self) -> f64 {
        self.sample_rate_hz as f64 / 2.0
    }

    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or_else(|| self.nyquist())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of STFT columns for a frame of `len` samples (no centring).
    pub fn n_time(&self, len: usize) -> usize {
        if len < self.n_fft {
            0
        } else {
            (len - self.n_fft) / self.hop + 1
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.to_string()));
        if self.sample_rate_hz == 0 {
            return bad("sample_rate_hz must be positive");
        }
        if self.n_fft < 2 || self.hop == 0 || self.hop > self.n_fft {
            return bad("need 0 < hop <= n_fft and n_fft >= 2");
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1");
        }
        let fmax = self.fmax_hz();
        if !(self.fmin >= 0.0 && self.fmin < fmax && fmax <= self.nyquist()) {
            return bad("need 0 <= fmin < fmax <= sample_rate / 2");
        }
        if !(self.db_floor != 0.0 && self.db_floor.is_finite()) {
            return bad("db_floor must be a nonzero finite dB value");
        }
        Ok(())
    }
}

/// `|X|^2` grid stored bin-major: `values[bin * n_time + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub n_bins: usize,
    pub n_time: usize,
    pub values: Vec<f64>,
}

impl PowerSpectrogram {
    pub fn at(&self, bin: usize, t: usize) -> f64 {
        self.values[bin * self.n_time + t]
    }
}

/// Log-Mel grid in `[0, 1]`, mel-major: `values[mel * n_time + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub n_mels: usize,
    pub n_time: usize,
    pub values: Vec<f64>,
}

impl MelSpectrogram {
    pub fn at(&self, mel: usize, t: usize) -> f64 {
        self.values[mel * self.n_time + t]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_mels, self.n_time)
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Triangle corner frequencies: `n_mels + 2` points equally spaced in mel.
pub fn mel_band_edges(cfg: &FeatureConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax_hz());
    let n = cfg.n_mels + 1;
    (0..=n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64))
        .collect()
}

/// Dense filterbank matrix, row-major `n_mels x (n_fft/2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    pub weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }
}

/// Peak-normalised triangular filters; neighbours meet at each other's centres.
pub fn mel_filterbank(sample_rate: u32, cfg: &FeatureConfig) -> Result<MelFilterbank, FeatureError> {
    let cfg = FeatureConfig {
        sample_rate_hz: sample_rate,
        ..cfg.clone()
    };
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let edges = mel_band_edges(&cfg);
    let bin_hz = sample_rate as f64 / cfg.n_fft as f64;
    let mut weights = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let rising = (f - left) / (centre - left);
            let falling = (right - f) / (right - centre);
            weights[m * n_bins + k] = rising.min(falling).max(0.0);
        }
    }
    Ok(MelFilterbank {
        n_mels: cfg.n_mels,
        n_bins,
        weights,
    })
}

/// Reusable STFT plan + filterbank for one [`FeatureConfig`].
#[derive(Clone)]
pub struct MelExtractor {
    cfg: FeatureConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: MelFilterbank,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor").field("cfg", &self.cfg).finish()
    }
}

impl MelExtractor {
    pub fn new(cfg: &FeatureConfig) -> Result<Self, FeatureError> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            cfg: cfg.clone(),
            window: hann(cfg.n_fft),
            fft,
            filterbank: mel_filterbank(cfg.sample_rate_hz, cfg)?,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Hann-windowed, non-centred STFT power.
    pub fn power(&self, samples: &[f64]) -> Result<PowerSpectrogram, FeatureError> {
        let n_fft = self.cfg.n_fft;
        if samples.len() < n_fft {
            return Err(FeatureError::FrameTooShort {
                len: samples.len(),
                n_fft,
            });
        }
        let n_time = self.cfg.n_time(samples.len());
        let n_bins = self.cfg.n_bins();
        let mut values = vec![0.0; n_bins * n_time];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        for t in 0..n_time {
            let chunk = &samples[t * self.cfg.hop..t * self.cfg.hop + n_fft];
            for ((b, &x), &w) in buf.iter_mut().zip(chunk).zip(&self.window) {
                *b = Complex::new(x * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (k, c) in buf.iter().take(n_bins).enumerate() {
                values[k * n_time + t] = c.norm_sqr();
            }
        }
        Ok(PowerSpectrogram {
            n_bins,
            n_time,
            values,
        })
    }

    /// Log-Mel features scaled to `[0, 1]`.
    ///
    /// The frame is first divided by its peak amplitude, so features do not
    /// depend on recording gain. Levels are taken relative to the
    /// spectrogram maximum, clamped at `|db_floor|` below it, and mapped
    /// affinely so the floor is 0 and the maximum is exactly 1. A silent
    /// frame maps to all zeros.
    pub fn log_mel(&self, samples: &[f64]) -> Result<MelSpectrogram, FeatureError> {
        let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let n_time = self.cfg.n_time(samples.len());
        let n_mels = self.cfg.n_mels;
        if peak == 0.0 {
            // still enforce the length precondition
            self.power(samples)?;
            return Ok(MelSpectrogram {
                n_mels,
                n_time,
                values: vec![0.0; n_mels * n_time],
            });
        }
        let normalised: Vec<f64> = samples.iter().map(|s| s / peak).collect();
        let power = self.power(&normalised)?;

        let mut db = vec![0.0; n_mels * n_time];
        for m in 0..n_mels {
            let row = self.filterbank.row(m);
            for t in 0..n_time {
                let energy: f64 = row
                    .iter()
                    .enumerate()
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(k, &w)| w * power.values[k * n_time + t])
                    .sum();
                db[m * n_time + t] = 10.0 * (energy + POWER_EPSILON).log10();
            }
        }
        let max_db = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = self.cfg.db_floor.abs();
        let values = db
            .into_iter()
            .map(|v| (v - max_db).max(-range) / range + 1.0)
            .collect();
        Ok(MelSpectrogram {
            n_mels,
            n_time,
            values,
        })
    }
}

pub fn stft_power(frame: &Frame, cfg: &FeatureConfig) -> Result<PowerSpectrogram, FeatureError> {
    MelExtractor::new(cfg)?.power(&frame.samples)
}

pub fn log_mel(frame: &Frame, cfg: &FeatureConfig) -> Result<MelSpectrogram, FeatureError> {
    MelExtractor::new(cfg)?.log_mel(&frame.samples)
}
