//! PCM16 WAV decoding/encoding and band-limited sample-rate conversion.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Rate every clip is converted to before segmentation, so a frame of
/// 5120 samples always spans the same duration.
pub const CANONICAL_SAMPLE_RATE: u32 = 22_050;

const PCM16_SCALE: f64 = 32768.0;
const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio file not found: {0}")]
    NotFound(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV encoding: format tag {0:#06x} (only integer PCM is supported)")]
    NotPcm(u16),
    #[error("unsupported bit depth: {0} (only 16-bit PCM is supported)")]
    UnsupportedBitDepth(u16),
    #[error("unsupported channel count: {0} (mono or stereo only)")]
    UnsupportedChannels(u16),
    #[error("invalid sample rate: {0}")]
    InvalidSampleRate(u32),
}

/// Mono waveform with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    /// Builds a clip, clamping samples into `[-1, 1]`.
    pub fn new(mut samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::InvalidSampleRate(0));
        }
        for s in &mut samples {
            *s = s.clamp(-1.0, 1.0);
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            AudioError::NotFound(path.to_path_buf())
        } else {
            AudioError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    decode_wav(&bytes)
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes an in-memory RIFF/WAVE PCM16 file. Stereo is averaged to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    let malformed = |msg: &str| AudioError::MalformedHeader(msg.to_string());
    if bytes.len() < 12 {
        return Err(malformed("file shorter than RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed("missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing WAVE tag"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.saturating_add(size);
        match id {
            b"fmt " => {
                if size < 16 || body_end > bytes.len() {
                    return Err(malformed("truncated fmt chunk"));
                }
                let b = &bytes[body_start..body_end];
                let mut tag = le_u16(b, 0);
                let channels = le_u16(b, 2);
                let rate = le_u32(b, 4);
                let bits = le_u16(b, 14);
                if tag == WAVE_FORMAT_EXTENSIBLE {
                    if size < 26 {
                        return Err(malformed("truncated WAVE_FORMAT_EXTENSIBLE chunk"));
                    }
                    // first two bytes of the SubFormat GUID carry the real tag
                    tag = le_u16(b, 24);
                }
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => {
                // tolerate writers that leave the data size short of the real length
                let end = body_end.min(bytes.len());
                data = Some(&bytes[body_start..end]);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_end.saturating_add(size & 1);
    }

    let (tag, channels, rate, bits) = fmt.ok_or_else(|| malformed("missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;
    if tag != WAVE_FORMAT_PCM {
        return Err(AudioError::NotPcm(tag));
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedBitDepth(bits));
    }
    if channels != 1 && channels != 2 {
        return Err(AudioError::UnsupportedChannels(channels));
    }
    if rate == 0 {
        return Err(AudioError::InvalidSampleRate(rate));
    }

    let frame_bytes = 2 * channels as usize;
    let samples = data
        .chunks_exact(frame_bytes)
        .map(|frame| {
            let sum: f64 = frame
                .chunks_exact(2)
                .map(|s| i16::from_le_bytes([s[0], s[1]]) as f64 / PCM16_SCALE)
                .sum();
            sum / channels as f64
        })
        .collect();
    AudioClip::new(samples, rate)
}

/// Encodes a clip as mono PCM16; `s` maps to `round(s * 32768)` saturated to i16.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let q = (s * PCM16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), AudioError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip)).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Zero crossings of the sinc kernel on each side of the centre, measured at
/// the lower of the two rates.
const SINC_HALF_ZEROS: usize = 24;
const KAISER_BETA: f64 = 8.6;
/// Passband edge as a fraction of the lower Nyquist frequency.
const CUTOFF_FRACTION: f64 = 0.94;
/// Above this many phases the per-phase kernels are computed on the fly.
const MAX_TABLE_PHASES: u64 = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(t: f64) -> f64 {
    // t in [-1, 1]
    if t.abs() >= 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - t * t).sqrt()) / bessel_i0(KAISER_BETA)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Polyphase windowed-sinc kernel for a rational ratio `up / down`.
struct PolyphaseKernel {
    up: u64,
    down: u64,
    /// Input taps on each side of the output position.
    half_width: usize,
    cutoff: f64,
    table: Option<Vec<Vec<f64>>>,
}

impl PolyphaseKernel {
    fn new(source_hz: u32, target_hz: u32) -> Self {
        let g = gcd(source_hz as u64, target_hz as u64);
        let up = target_hz as u64 / g;
        let down = source_hz as u64 / g;
        // cutoff in cycles per input sample, relative to input Nyquist
        let cutoff = CUTOFF_FRACTION * (target_hz as f64 / source_hz as f64).min(1.0);
        let half_width = (SINC_HALF_ZEROS as f64 / cutoff).ceil() as usize;
        let mut kernel = Self {
            up,
            down,
            half_width,
            cutoff,
            table: None,
        };
        if up <= MAX_TABLE_PHASES {
            kernel.table = Some((0..up).map(|p| kernel.phase_taps(p)).collect());
        }
        kernel
    }

    /// Taps for output positions whose fractional input offset is `phase / up`.
    /// Tap `j` multiplies input sample `base + j - half_width + 1`.
    /// Taps are normalised to unit sum so DC passes unchanged.
    fn phase_taps(&self, phase: u64) -> Vec<f64> {
        let frac = phase as f64 / self.up as f64;
        let hw = self.half_width as f64;
        let mut taps: Vec<f64> = (0..2 * self.half_width)
            .map(|j| {
                let x = j as f64 - hw + 1.0 - frac;
                self.cutoff * sinc(self.cutoff * x) * kaiser(x / hw)
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        if sum != 0.0 {
            for t in &mut taps {
                *t /= sum;
            }
        }
        taps
    }
}

/// Output length `round(len * target / source)` in exact integer arithmetic.
pub fn resampled_len(len: usize, source_hz: u32, target_hz: u32) -> usize {
    let num = len as u128 * target_hz as u128;
    let den = source_hz as u128;
    ((2 * num + den) / (2 * den)) as usize
}

/// Band-limited conversion to `target_hz` with a Kaiser-windowed sinc
/// polyphase filter. Identity when the rates already match.
pub fn resample(clip: &AudioClip, target_hz: u32) -> Result<AudioClip, AudioError> {
    if target_hz == 0 {
        return Err(AudioError::InvalidSampleRate(target_hz));
    }
    if target_hz == clip.sample_rate_hz {
        return Ok(clip.clone());
    }
    let kernel = PolyphaseKernel::new(clip.sample_rate_hz, target_hz);
    let input = &clip.samples;
    let out_len = resampled_len(input.len(), clip.sample_rate_hz, target_hz);
    let hw = kernel.half_width as i64;
    let mut scratch;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * kernel.down;
        let base = (pos / kernel.up) as i64;
        let phase = pos % kernel.up;
        let taps: &[f64] = match &kernel.table {
            Some(table) => &table[phase as usize],
            None => {
                scratch = kernel.phase_taps(phase);
                &scratch
            }
        };
        let first = base - hw + 1;
        let mut acc = 0.0;
        for (j, &t) in taps.iter().enumerate() {
            let idx = first + j as i64;
            if idx >= 0 && (idx as usize) < input.len() {
                acc += t * input[idx as usize];
            }
        }
        out.push(acc);
    }
    AudioClip::new(out, target_hz)
}
