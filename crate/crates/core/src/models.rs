//! The direct regressor and the ordinal-distance Siamese regressor: pair
//! sampling, training loops, inference and checkpoint persistence.
//!
//! Both models share one scalar head `s(x)`. The baseline fits `s(x)` to the
//! label value; the Siamese model fits `s(a) - s(b)` to the difference of the
//! two label values, so its `s` is an absolute coordinate only up to an
//! additive constant. Calibrated boundaries absorb that constant.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{self, ContainerError, NamedTensor};
use crate::evaluation::{calibrate_boundaries, Boundaries, Dimension, EvalError, OrdinalLabel};
use crate::features::{FeatureConfig, FeatureError, MelExtractor, MelSpectrogram};
use crate::nn::{
    adam_step, backward_params, forward, init_params, predict, AdamConfig, AdamState, Gradients,
    LayerParams, NetError, NetSpec, Params, Tensor,
};
use crate::rng::XorShift64Star;
use crate::segmentation::{Frame, SegmentationConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const PAIR_STREAM: u64 = 0x5041_4952;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("checkpoint container: {0}")]
    Container(#[from] ContainerError),
    #[error("checkpoint metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set has no {0} examples; all three label classes are required")]
    MissingClass(&'static str),
    #[error("need at least 2 frames to form pairs, got {0}")]
    TooFewFrames(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("unsupported checkpoint version {found} (this build reads {CHECKPOINT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("checkpoint holds a model for {found}, expected {expected}")]
    DimensionMismatch { expected: Dimension, found: Dimension },
    #[error("checkpoint tensors do not match its network spec: {0}")]
    TensorLayout(String),
    #[error("an event needs at least one frame")]
    EmptyEvent,
    #[error("frames from several events ({0:?} and {1:?}) passed as one event")]
    MixedEvents(String, String),
    #[error("feature grid {got:?} does not match network input {expected:?}")]
    FeatureShape { expected: (usize, usize), got: (usize, usize) },
    #[error("checkpoint has no calibrated boundaries")]
    MissingBoundaries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Baseline,
    Siamese,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(ModelKind::Baseline),
            "siamese" => Ok(ModelKind::Siamese),
            other => Err(format!("unknown model kind {other:?} (expected baseline or siamese)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Siamese => "siamese",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Siamese only; `None` means four pairs per training frame.
    pub pairs_per_epoch: Option<usize>,
    pub dimension: Dimension,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 42,
            pairs_per_epoch: None,
            dimension: Dimension::Arousal,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.pairs_per_epoch == Some(0) {
            return bad("pairs_per_epoch must be positive");
        }
        Ok(())
    }
}

/// Network architecture plus the front-end settings it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSetup {
    pub net: NetSpec,
    pub features: FeatureConfig,
    pub segmentation: SegmentationConfig,
}

impl ModelSetup {
    /// Default head sized for the given front-end settings.
    pub fn new(features: FeatureConfig, segmentation: SegmentationConfig) -> Self {
        let net = NetSpec::default_head(features.n_mels, features.n_time(segmentation.target_len));
        Self {
            net,
            features,
            segmentation,
        }
    }
}

impl Default for ModelSetup {
    fn default() -> Self {
        Self::new(FeatureConfig::default(), SegmentationConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: MelSpectrogram,
    pub label: OrdinalLabel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingPair {
    pub a: usize,
    pub b: usize,
    /// `value(label_a) - value(label_b)`
    pub target: f64,
}

/// Self-describing trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ModelKind,
    pub dimension: Dimension,
    pub seed: u64,
    pub features: FeatureConfig,
    pub segmentation: SegmentationConfig,
    pub boundaries: Option<Boundaries>,
    params: Params,
}

impl Checkpoint {
    /// Parameters are rounded to `f32` so that saving is lossless.
    pub fn new(
        kind: ModelKind,
        dimension: Dimension,
        mut params: Params,
        features: FeatureConfig,
        segmentation: SegmentationConfig,
        boundaries: Option<Boundaries>,
    ) -> Self {
        params.round_to_f32();
        Self {
            version: CHECKPOINT_VERSION,
            kind,
            dimension,
            seed: params.seed(),
            features,
            segmentation,
            boundaries,
            params,
        }
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn net(&self) -> &NetSpec {
        self.params.spec()
    }

    pub fn boundaries(&self) -> Result<Boundaries, ModelError> {
        self.boundaries.ok_or(ModelError::MissingBoundaries)
    }

    pub fn extractor(&self) -> Result<MelExtractor, ModelError> {
        Ok(MelExtractor::new(&self.features)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    /// Mean squared error over each epoch's samples (or pairs).
    pub loss_history: Vec<f64>,
}

pub fn mel_to_tensor(mel: &MelSpectrogram, spec: &NetSpec) -> Result<Tensor, ModelError> {
    let [c, h, w] = spec.input;
    if c != 1 || (h, w) != mel.shape() {
        return Err(ModelError::FeatureShape {
            expected: (h, w),
            got: mel.shape(),
        });
    }
    Ok(Tensor::new(vec![1, h, w], mel.values.clone())?)
}

fn head_output(params: &Params, x: &Tensor) -> Result<f64, ModelError> {
    Ok(predict(params, x)?.data()[0])
}

/// Head scalar `s(x)` for raw parameters.
pub fn head_scalar(params: &Params, x: &MelSpectrogram) -> Result<f64, ModelError> {
    head_output(params, &mel_to_tensor(x, params.spec())?)
}

/// `s(xa) - s(xb)` through one weight-sharing head.
pub fn siamese_forward(
    params: &Params,
    xa: &MelSpectrogram,
    xb: &MelSpectrogram,
) -> Result<f64, ModelError> {
    Ok(head_scalar(params, xa)? - head_scalar(params, xb)?)
}

pub fn predict_scalar(ckpt: &Checkpoint, features: &MelSpectrogram) -> Result<f64, ModelError> {
    head_scalar(&ckpt.params, features)
}

/// Mean of per-frame scores. Scores are summed in sorted order so the result
/// does not depend on frame order.
pub fn mean_score(scores: &[f64]) -> Result<f64, ModelError> {
    if scores.is_empty() {
        return Err(ModelError::EmptyEvent);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted.iter().sum::<f64>() / sorted.len() as f64)
}

pub fn predict_event_features(
    ckpt: &Checkpoint,
    features: &[MelSpectrogram],
) -> Result<f64, ModelError> {
    let scores = features
        .iter()
        .map(|m| predict_scalar(ckpt, m))
        .collect::<Result<Vec<_>, _>>()?;
    mean_score(&scores)
}

/// Event score: mean head output over all frames of one event.
pub fn predict_event(ckpt: &Checkpoint, frames: &[Frame]) -> Result<f64, ModelError> {
    let first = frames.first().ok_or(ModelError::EmptyEvent)?;
    if let Some(other) = frames.iter().find(|f| f.event_id != first.event_id) {
        return Err(ModelError::MixedEvents(first.event_id.clone(), other.event_id.clone()));
    }
    let extractor = ckpt.extractor()?;
    let features = frames
        .iter()
        .map(|f| extractor.log_mel(&f.samples))
        .collect::<Result<Vec<_>, _>>()?;
    predict_event_features(ckpt, &features)
}

/// Stratified pair sampling for one epoch.
///
/// The nine ordered label cells (label_a, label_b) that can be populated
/// receive `n / cells` pairs each; the remainder goes to randomly chosen
/// distinct cells. Within a cell both members are drawn uniformly, never the
/// same index twice. The stream depends only on `(seed, epoch)`.
pub fn make_pairs(
    labels: &[OrdinalLabel],
    pairs_per_epoch: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<TrainingPair>, ModelError> {
    if labels.len() < 2 {
        return Err(ModelError::TooFewFrames(labels.len()));
    }
    let pools: Vec<Vec<usize>> = OrdinalLabel::ALL
        .iter()
        .map(|&l| (0..labels.len()).filter(|&i| labels[i] == l).collect())
        .collect();
    let cells: Vec<(usize, usize)> = (0..3)
        .flat_map(|a| (0..3).map(move |b| (a, b)))
        .filter(|&(a, b)| {
            let need_a = if a == b { 2 } else { 1 };
            pools[a].len() >= need_a && !pools[b].is_empty()
        })
        .collect();

    let mut rng = XorShift64Star::stream(seed, &[PAIR_STREAM, epoch]);
    let base = pairs_per_epoch / cells.len();
    let mut extra: Vec<usize> = (0..cells.len()).collect();
    rng.shuffle(&mut extra);
    let extra = &extra[..pairs_per_epoch % cells.len()];

    let mut pairs = Vec::with_capacity(pairs_per_epoch);
    for (ci, &(la, lb)) in cells.iter().enumerate() {
        let quota = base + usize::from(extra.contains(&ci));
        let (pa, pb) = (&pools[la], &pools[lb]);
        for _ in 0..quota {
            let ia = rng.below(pa.len());
            let a = pa[ia];
            let b = if la == lb {
                let mut j = rng.below(pb.len() - 1);
                if j >= ia {
                    j += 1;
                }
                pb[j]
            } else {
                pb[rng.below(pb.len())]
            };
            pairs.push(TrainingPair {
                a,
                b,
                target: labels[a].value() - labels[b].value(),
            });
        }
    }
    rng.shuffle(&mut pairs);
    Ok(pairs)
}

fn check_training_set(examples: &[LabeledExample]) -> Result<(), ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    for class in OrdinalLabel::ALL {
        if !examples.iter().any(|e| e.label == class) {
            return Err(ModelError::MissingClass(class.name()));
        }
    }
    Ok(())
}

fn gradient_of(params: &Params, x: &Tensor, upstream: f64) -> Result<(f64, Gradients), ModelError> {
    let (out, tape) = forward(params, x)?;
    let g = backward_params(params, &tape, &Tensor::scalar(upstream))?;
    Ok((out.data()[0], g))
}

fn finish(
    kind: ModelKind,
    cfg: &TrainConfig,
    setup: &ModelSetup,
    params: Params,
    inputs: &[Tensor],
    examples: &[LabeledExample],
    loss_history: Vec<f64>,
) -> Result<TrainedModel, ModelError> {
    let mut checkpoint = Checkpoint::new(
        kind,
        cfg.dimension,
        params,
        setup.features.clone(),
        setup.segmentation.clone(),
        None,
    );
    let preds = inputs
        .iter()
        .map(|x| head_output(checkpoint.params(), x))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<OrdinalLabel> = examples.iter().map(|e| e.label).collect();
    checkpoint.boundaries = Some(calibrate_boundaries(&preds, &labels)?);
    Ok(TrainedModel {
        checkpoint,
        loss_history,
    })
}

fn prepare(
    examples: &[LabeledExample],
    cfg: &TrainConfig,
    setup: &ModelSetup,
) -> Result<(Params, Vec<Tensor>), ModelError> {
    cfg.validate()?;
    check_training_set(examples)?;
    setup.net.validate_regression_head()?;
    let inputs = examples
        .iter()
        .map(|e| mel_to_tensor(&e.features, &setup.net))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((init_params(&setup.net, cfg.seed)?, inputs))
}

/// Fits `s(x)` to the label value by mini-batch Adam on mean squared error,
/// then calibrates decoding boundaries on the training predictions.
pub fn train_baseline(
    examples: &[LabeledExample],
    cfg: &TrainConfig,
    setup: &ModelSetup,
) -> Result<TrainedModel, ModelError> {
    train_baseline_with_progress(examples, cfg, setup, |_, _| {})
}

pub fn train_baseline_with_progress(
    examples: &[LabeledExample],
    cfg: &TrainConfig,
    setup: &ModelSetup,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainedModel, ModelError> {
    let (mut params, inputs) = prepare(examples, cfg, setup)?;
    let mut adam = AdamState::new(&params);
    let opt = AdamConfig::with_lr(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        XorShift64Star::stream(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 2.0 / batch.len() as f64;
            let mut grads = Gradients::zeros_like(&params);
            for &i in batch {
                let target = examples[i].label.value();
                let (out, tape) = forward(&params, &inputs[i])?;
                let err = out.data()[0] - target;
                epoch_loss += err * err;
                grads.accumulate(&backward_params(&params, &tape, &Tensor::scalar(scale * err))?);
            }
            adam_step(&mut params, &grads, &mut adam, &opt)?;
        }
        let mean = epoch_loss / examples.len() as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    finish(ModelKind::Baseline, cfg, setup, params, &inputs, examples, history)
}

/// Fits `s(a) - s(b)` to `value(a) - value(b)` over stratified pairs by
/// mini-batch Adam on mean squared error. Gradients from both branches are
/// summed into the shared head. Boundaries are then calibrated on the
/// single-branch outputs of the training frames.
pub fn train_siamese(
    examples: &[LabeledExample],
    cfg: &TrainConfig,
    setup: &ModelSetup,
) -> Result<TrainedModel, ModelError> {
    train_siamese_with_progress(examples, cfg, setup, |_, _| {})
}

pub fn train_siamese_with_progress(
    examples: &[LabeledExample],
    cfg: &TrainConfig,
    setup: &ModelSetup,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainedModel, ModelError> {
    let (mut params, inputs) = prepare(examples, cfg, setup)?;
    let labels: Vec<OrdinalLabel> = examples.iter().map(|e| e.label).collect();
    let n_pairs = cfg.pairs_per_epoch.unwrap_or(4 * examples.len());
    let mut adam = AdamState::new(&params);
    let opt = AdamConfig::with_lr(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let pairs = make_pairs(&labels, n_pairs, cfg.seed, epoch as u64)?;
        let mut epoch_loss = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let scale = 2.0 / batch.len() as f64;
            let mut grads = Gradients::zeros_like(&params);
            for pair in batch {
                let (sa, tape_a) = forward(&params, &inputs[pair.a])?;
                let (sb, tape_b) = forward(&params, &inputs[pair.b])?;
                let err = sa.data()[0] - sb.data()[0] - pair.target;
                epoch_loss += err * err;
                grads.accumulate(&backward_params(&params, &tape_a, &Tensor::scalar(scale * err))?);
                grads.accumulate(&backward_params(&params, &tape_b, &Tensor::scalar(-scale * err))?);
            }
            adam_step(&mut params, &grads, &mut adam, &opt)?;
        }
        let mean = epoch_loss / pairs.len().max(1) as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    finish(ModelKind::Siamese, cfg, setup, params, &inputs, examples, history)
}

pub fn train(
    kind: ModelKind,
    examples: &[LabeledExample],
    cfg: &TrainConfig,
    setup: &ModelSetup,
    on_epoch: impl FnMut(usize, f64),
) -> Result<TrainedModel, ModelError> {
    match kind {
        ModelKind::Baseline => train_baseline_with_progress(examples, cfg, setup, on_epoch),
        ModelKind::Siamese => train_siamese_with_progress(examples, cfg, setup, on_epoch),
    }
}

/// Squared-error loss of one pair and its gradient, for gradient checks.
pub fn siamese_pair_loss_gradient(
    params: &Params,
    xa: &MelSpectrogram,
    xb: &MelSpectrogram,
    target: f64,
) -> Result<(f64, Gradients), ModelError> {
    let ta = mel_to_tensor(xa, params.spec())?;
    let tb = mel_to_tensor(xb, params.spec())?;
    let d = head_output(params, &ta)? - head_output(params, &tb)?;
    let err = d - target;
    let (_, mut ga) = gradient_of(params, &ta, 2.0 * err)?;
    let (_, gb) = gradient_of(params, &tb, -2.0 * err)?;
    ga.accumulate(&gb);
    Ok((err * err, ga))
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    version: u32,
    model: ModelKind,
    dimension: Dimension,
    seed: u64,
    net: NetSpec,
    features: FeatureConfig,
    segmentation: SegmentationConfig,
    boundaries: Option<Boundaries>,
}

fn to_named(name: String, t: &Tensor) -> NamedTensor {
    NamedTensor {
        name,
        dims: t.shape().iter().map(|&d| d as u32).collect(),
        values: t.data().iter().map(|&v| v as f32).collect(),
    }
}

pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>, ModelError> {
    let meta = CheckpointMeta {
        version: ckpt.version,
        model: ckpt.kind,
        dimension: ckpt.dimension,
        seed: ckpt.seed,
        net: ckpt.net().clone(),
        features: ckpt.features.clone(),
        segmentation: ckpt.segmentation.clone(),
        boundaries: ckpt.boundaries,
    };
    let json = serde_json::to_string(&meta)?;
    let tensors: Vec<NamedTensor> = ckpt
        .params
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, slot)| slot.as_ref().map(|p| (i, p)))
        .flat_map(|(i, p)| {
            [
                to_named(format!("layer{i}.weight"), &p.weight),
                to_named(format!("layer{i}.bias"), &p.bias),
            ]
        })
        .collect();
    Ok(container::encode(&json, &tensors))
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let (json, tensors) = container::decode(bytes)?;
    let version = serde_json::from_str::<serde_json::Value>(&json)?
        .get("version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch { found: version });
    }
    let meta: CheckpointMeta = serde_json::from_str(&json)?;
    let mut by_name: std::collections::HashMap<String, NamedTensor> =
        tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut take = |name: String| -> Result<Tensor, ModelError> {
        let t = by_name
            .remove(&name)
            .ok_or_else(|| ModelError::TensorLayout(format!("missing tensor {name}")))?;
        Ok(Tensor::new(
            t.dims.iter().map(|&d| d as usize).collect(),
            t.values.iter().map(|&v| v as f64).collect(),
        )?)
    };
    let mut layers = Vec::with_capacity(meta.net.layers.len());
    for (i, layer) in meta.net.layers.iter().enumerate() {
        layers.push(if layer.has_params() {
            Some(LayerParams {
                weight: take(format!("layer{i}.weight"))?,
                bias: take(format!("layer{i}.bias"))?,
            })
        } else {
            None
        });
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(ModelError::TensorLayout(format!("unexpected tensor {extra}")));
    }
    let params = Params::from_layers(meta.net, meta.seed, layers)?;
    Ok(Checkpoint {
        version,
        kind: meta.model,
        dimension: meta.dimension,
        seed: meta.seed,
        features: meta.features,
        segmentation: meta.segmentation,
        boundaries: meta.boundaries,
        params,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_bytes(ckpt)?).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint_from_bytes(&bytes)
}

/// Loads a checkpoint and checks its dimension tag.
pub fn load_checkpoint_for(
    path: impl AsRef<Path>,
    expected: Dimension,
) -> Result<Checkpoint, ModelError> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.dimension != expected {
        return Err(ModelError::DimensionMismatch {
            expected,
            found: ckpt.dimension,
        });
    }
    Ok(ckpt)
}
