//! Ordinal decoding, accuracy, confusion counts, the Turn-around Percentage
//! and event-level splitting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::XorShift64Star;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("label class {0} missing from calibration data")]
    MissingClass(&'static str),
    #[error("non-finite prediction at index {0}")]
    NonFinite(usize),
    #[error("TAP undefined: no High or Low instances in the reference labels")]
    UndefinedTap,
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("split of {n} events at fraction {fraction} leaves a side empty")]
    EmptySide { n: usize, fraction: f64 },
    #[error("duplicate event id {0:?}")]
    DuplicateEvent(String),
    #[error("unknown label token {0:?}")]
    UnknownLabel(String),
}

/// Three-level ordinal label: `Low < Medium < High`. For valence the same
/// levels read Negative / Neutral / Positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrdinalLabel {
    Low,
    Medium,
    High,
}

impl OrdinalLabel {
    pub const ALL: [OrdinalLabel; 3] = [OrdinalLabel::Low, OrdinalLabel::Medium, OrdinalLabel::High];

    /// Numeric image used as the regression target.
    pub fn value(self) -> f64 {
        match self {
            OrdinalLabel::High => 1.0,
            OrdinalLabel::Medium => 0.0,
            OrdinalLabel::Low => -1.0,
        }
    }

    /// Position in `Low, Medium, High` order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OrdinalLabel::Low => "low",
            OrdinalLabel::Medium => "medium",
            OrdinalLabel::High => "high",
        }
    }

    pub fn valence_name(self) -> &'static str {
        match self {
            OrdinalLabel::Low => "negative",
            OrdinalLabel::Medium => "neutral",
            OrdinalLabel::High => "positive",
        }
    }

    /// Token for a given dimension (`high` for arousal, `positive` for valence...).
    pub fn token(self, dim: Dimension) -> &'static str {
        match dim {
            Dimension::Arousal => self.name(),
            Dimension::Valence => self.valence_name(),
        }
    }
}

impl FromStr for OrdinalLabel {
    type Err = EvalError;

    /// Case-insensitive; accepts both the arousal and the valence vocabulary.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" | "positive" => Ok(OrdinalLabel::High),
            "medium" | "neutral" => Ok(OrdinalLabel::Medium),
            "low" | "negative" => Ok(OrdinalLabel::Low),
            _ => Err(EvalError::UnknownLabel(s.to_string())),
        }
    }
}

impl fmt::Display for OrdinalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Arousal,
    Valence,
}

impl Dimension {
    pub fn name(self) -> &'static str {
        match self {
            Dimension::Arousal => "arousal",
            Dimension::Valence => "valence",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "arousal" => Ok(Dimension::Arousal),
            "valence" => Ok(Dimension::Valence),
            other => Err(format!("unknown dimension {other:?} (expected arousal or valence)")),
        }
    }
}

/// Serialises `f64` with infinities spelled `"inf"` / `"-inf"` (JSON has no infinity).
mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(de::Error::custom(format!("invalid threshold {other:?}"))),
            },
        }
    }
}

/// Two thresholds splitting the real line into Low / Medium / High:
/// `(-inf, t_low)`, `[t_low, t_high)`, `[t_high, +inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundaries {
    #[serde(with = "extended_f64")]
    pub t_low: f64,
    #[serde(with = "extended_f64")]
    pub t_high: f64,
}

impl Boundaries {
    /// Centre of the Medium interval, used as the neutral point of a
    /// dimension. An infinite threshold contributes nothing: the finite one
    /// is used alone, and with both infinite the neutral point is 0.
    pub fn neutral_point(&self) -> f64 {
        match (self.t_low.is_finite(), self.t_high.is_finite()) {
            (true, true) => (self.t_low + self.t_high) / 2.0,
            (true, false) => self.t_low,
            (false, true) => self.t_high,
            (false, false) => 0.0,
        }
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self {
            t_low: self.t_low + c,
            t_high: self.t_high + c,
        }
    }
}

pub fn decode(v: f64, b: &Boundaries) -> OrdinalLabel {
    if v >= b.t_high {
        OrdinalLabel::High
    } else if v >= b.t_low {
        OrdinalLabel::Medium
    } else {
        OrdinalLabel::Low
    }
}

pub fn accuracy(pred: &[OrdinalLabel], truth: &[OrdinalLabel]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `counts[true][predicted]`, both indexed `Low, Medium, High`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_labels(pred: &[OrdinalLabel], truth: &[OrdinalLabel]) -> Result<Self, EvalError> {
        if pred.len() != truth.len() {
            return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
        }
        let mut cm = Self::default();
        for (p, t) in pred.iter().zip(truth) {
            cm.counts[t.index()][p.index()] += 1;
        }
        Ok(cm)
    }

    pub fn get(&self, truth: OrdinalLabel, pred: OrdinalLabel) -> u64 {
        self.counts[truth.index()][pred.index()]
    }

    pub fn row_total(&self, truth: OrdinalLabel) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (0..3).map(|i| self.counts[i][i]).sum::<u64>() as f64 / total as f64)
    }
}

/// Turn-around Percentage: the share of extreme-class instances decoded as
/// the opposite extreme,
/// `100 * (N(High->Low) + N(Low->High)) / (N(total High) + N(total Low))`.
pub fn tap(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    use OrdinalLabel::{High, Low};
    let denom = cm.row_total(High) + cm.row_total(Low);
    if denom == 0 {
        return Err(EvalError::UndefinedTap);
    }
    let flips = cm.get(High, Low) + cm.get(Low, High);
    Ok(100.0 * flips as f64 / denom as f64)
}

/// A threshold strictly above `a` and at most `b` (`a < b`), as close to
/// their midpoint as floating point allows.
fn split_point(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    if mid > a {
        mid
    } else {
        b
    }
}

/// Picks the threshold pair that maximises training accuracy.
///
/// Candidates are the midpoints between consecutive distinct sorted
/// predictions plus the sentinels -inf and +inf; every pair with
/// `t_low <= t_high` is scored exhaustively (via prefix counts). Ties go to
/// the smallest `t_low`, then the smallest `t_high`.
pub fn calibrate_boundaries(
    predictions: &[f64],
    labels: &[OrdinalLabel],
) -> Result<Boundaries, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(i) = predictions.iter().position(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    for class in OrdinalLabel::ALL {
        if !labels.contains(&class) {
            return Err(EvalError::MissingClass(class.name()));
        }
    }

    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));

    // Group equal values; cut k sits before group k (k = 0..=groups).
    let mut group_values: Vec<f64> = Vec::new();
    let mut group_counts: Vec<[u64; 3]> = Vec::new();
    for &i in &order {
        let v = predictions[i];
        if group_values.last() != Some(&v) {
            group_values.push(v);
            group_counts.push([0; 3]);
        }
        group_counts.last_mut().unwrap()[labels[i].index()] += 1;
    }
    let g = group_values.len();
    let mut below = vec![[0u64; 3]; g + 1];
    for k in 0..g {
        for c in 0..3 {
            below[k + 1][c] = below[k][c] + group_counts[k][c];
        }
    }
    let total_high = below[g][OrdinalLabel::High.index()];
    let threshold_at = |k: usize| -> f64 {
        if k == 0 {
            f64::NEG_INFINITY
        } else if k == g {
            f64::INFINITY
        } else {
            split_point(group_values[k - 1], group_values[k])
        }
    };

    // thresholds increase with the cut index, so scanning (i, j) in
    // lexicographic order and keeping the first maximum gives the tie-break
    let (lo, me, hi) = (
        OrdinalLabel::Low.index(),
        OrdinalLabel::Medium.index(),
        OrdinalLabel::High.index(),
    );
    let mut best = (0u64, 0usize, 0usize);
    let mut first = true;
    for i in 0..=g {
        for j in i..=g {
            let correct = below[i][lo] + (below[j][me] - below[i][me]) + (total_high - below[j][hi]);
            if first || correct > best.0 {
                best = (correct, i, j);
                first = false;
            }
        }
    }
    Ok(Boundaries {
        t_low: threshold_at(best.1),
        t_high: threshold_at(best.2),
    })
}

/// Shuffles event ids with a seeded stream and sends the first
/// `round(n * train_fraction)` to the training side.
pub fn event_level_split(
    event_ids: &[String],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>), EvalError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EvalError::BadFraction(train_fraction));
    }
    let mut seen = HashSet::new();
    for id in event_ids {
        if !seen.insert(id.as_str()) {
            return Err(EvalError::DuplicateEvent(id.clone()));
        }
    }
    let n = event_ids.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(EvalError::EmptySide {
            n,
            fraction: train_fraction,
        });
    }
    let mut ids = event_ids.to_vec();
    XorShift64Star::stream(seed, &[SPLIT_STREAM]).shuffle(&mut ids);
    let test = ids.split_off(n_train);
    Ok((ids, test))
}

const SPLIT_STREAM: u64 = 0x5350_4c49_54;

pub const HISTOGRAM_BINS: usize = 50;

/// Fixed-width histograms of prediction values per true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHistograms {
    pub bin_edges: Vec<f64>,
    pub histograms: BTreeMap<String, Vec<u64>>,
}

/// `bins` equal-width bins over `[min, max]` of `values` (last bin closed).
/// A degenerate range is widened to `[v - 0.5, v + 0.5]`.
pub fn class_histograms(
    values: &[f64],
    classes: &[String],
    bins: usize,
) -> Result<ClassHistograms, EvalError> {
    if values.len() != classes.len() {
        return Err(EvalError::LengthMismatch(values.len(), classes.len()));
    }
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut histograms: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for (v, class) in values.iter().zip(classes) {
        let idx = (((v - lo) / width).floor() as usize).min(bins - 1);
        histograms.entry(class.clone()).or_insert_with(|| vec![0; bins])[idx] += 1;
    }
    Ok(ClassHistograms {
        bin_edges,
        histograms,
    })
}
