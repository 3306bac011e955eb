//! A small feed-forward network engine: conv2d / relu / maxpool2x2 / flatten /
//! dense layers with explicit reverse-mode gradients and an Adam optimizer.
//!
//! Everything is single-sample and 64-bit. Batches are formed by the caller,
//! which accumulates per-sample gradients in a fixed order so training is
//! bit-reproducible.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::XorShift64Star;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("inconsistent network spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("tape does not belong to these parameters (stale or mismatched)")]
    StaleTape,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NetError> {
        if shape.iter().product::<usize>() != data.len() || shape.contains(&0) {
            return Err(NetError::BadTensor {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn scale(&mut self, k: f64) {
        for a in &mut self.data {
            *a *= k;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv2d {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
    Relu,
    #[serde(rename = "maxpool2x2")]
    MaxPool2x2,
    Flatten,
    Dense {
        out_units: usize,
    },
}

impl Layer {
    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Dense { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    /// (channels, height, width)
    pub input: [usize; 3],
    pub layers: Vec<Layer>,
}

impl NetSpec {
    /// Two conv blocks and a 64-unit hidden layer ending in one scalar.
    pub fn default_head(n_mels: usize, n_time: usize) -> Self {
        Self {
            input: [1, n_mels, n_time],
            layers: vec![
                Layer::Conv2d { out_channels: 8, kernel_h: 3, kernel_w: 3 },
                Layer::Relu,
                Layer::MaxPool2x2,
                Layer::Conv2d { out_channels: 16, kernel_h: 3, kernel_w: 3 },
                Layer::Relu,
                Layer::MaxPool2x2,
                Layer::Flatten,
                Layer::Dense { out_units: 64 },
                Layer::Relu,
                Layer::Dense { out_units: 1 },
            ],
        }
    }

    /// Activation shapes: element 0 is the input, element `i + 1` the output of layer `i`.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, NetError> {
        let bad = |m: String| Err(NetError::InvalidSpec(m));
        if self.input.contains(&0) {
            return bad(format!("input shape {:?} has a zero dimension", self.input));
        }
        let mut shapes = vec![self.input.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = shapes.last().unwrap();
            let next = match (*layer, cur.as_slice()) {
                (Layer::Conv2d { out_channels, kernel_h, kernel_w }, &[_, h, w]) => {
                    if out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
                        return bad(format!("layer {i}: zero-sized conv"));
                    }
                    if kernel_h > h || kernel_w > w {
                        return bad(format!("layer {i}: kernel larger than input {cur:?}"));
                    }
                    vec![out_channels, h - kernel_h + 1, w - kernel_w + 1]
                }
                (Layer::MaxPool2x2, &[c, h, w]) => {
                    if h < 2 || w < 2 {
                        return bad(format!("layer {i}: cannot pool {cur:?}"));
                    }
                    vec![c, h / 2, w / 2]
                }
                (Layer::Flatten, s) => vec![s.iter().product()],
                (Layer::Relu, s) => s.to_vec(),
                (Layer::Dense { out_units }, &[_]) => {
                    if out_units == 0 {
                        return bad(format!("layer {i}: zero-unit dense"));
                    }
                    vec![out_units]
                }
                (l, s) => return bad(format!("layer {i} ({l:?}) cannot take input of shape {s:?}")),
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// A regression head must end in `dense(1)`.
    pub fn validate_regression_head(&self) -> Result<(), NetError> {
        self.shapes()?;
        match self.layers.last() {
            Some(Layer::Dense { out_units: 1 }) => Ok(()),
            _ => Err(NetError::InvalidSpec(
                "regression head must end with dense(1)".into(),
            )),
        }
    }

    /// Weight and bias shapes for each layer (None for parameter-free layers).
    pub fn param_shapes(&self) -> Result<Vec<Option<(Vec<usize>, Vec<usize>)>>, NetError> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| match *layer {
                Layer::Conv2d { out_channels, kernel_h, kernel_w } => Some((
                    vec![out_channels, shapes[i][0], kernel_h, kernel_w],
                    vec![out_channels],
                )),
                Layer::Dense { out_units } => {
                    Some((vec![out_units, shapes[i][0]], vec![out_units]))
                }
                _ => None,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

static NEXT_PARAMS_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_PARAMS_ID.fetch_add(1, Ordering::Relaxed)
}

/// Network weights. Every mutation gets a new identity so tapes recorded
/// against older values are rejected by [`backward`].
#[derive(Debug, Clone)]
pub struct Params {
    spec: NetSpec,
    seed: u64,
    layers: Vec<Option<LayerParams>>,
    id: u64,
}

impl PartialEq for Params {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.seed == other.seed && self.layers == other.layers
    }
}

impl Params {
    /// Assembles parameters from explicit tensors, checking every shape.
    pub fn from_layers(
        spec: NetSpec,
        seed: u64,
        layers: Vec<Option<LayerParams>>,
    ) -> Result<Self, NetError> {
        let expected = spec.param_shapes()?;
        if expected.len() != layers.len() {
            return Err(NetError::InvalidSpec(format!(
                "{} layer parameter slots for {} layers",
                layers.len(),
                expected.len()
            )));
        }
        for (exp, got) in expected.iter().zip(&layers) {
            match (exp, got) {
                (None, None) => {}
                (Some((w, b)), Some(p)) => {
                    for (e, g) in [(w, &p.weight), (b, &p.bias)] {
                        if e.as_slice() != g.shape() {
                            return Err(NetError::ShapeMismatch {
                                expected: e.clone(),
                                got: g.shape().to_vec(),
                            });
                        }
                    }
                }
                _ => return Err(NetError::InvalidSpec("parameter slot mismatch".into())),
            }
        }
        Ok(Self {
            spec,
            seed,
            layers,
            id: fresh_id(),
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Option<LayerParams>] {
        &self.layers
    }

    /// Mutable access; invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Option<LayerParams>] {
        self.id = fresh_id();
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Rounds every value to the nearest `f32`, making the parameters exactly
    /// representable in the 32-bit checkpoint format.
    pub fn round_to_f32(&mut self) {
        for p in self.layers_mut().iter_mut().flatten() {
            for v in p.weight.data_mut().iter_mut().chain(p.bias.data_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` from an [`XorShift64Star`]
/// stream seeded with `seed`, layer by layer in row-major order; biases zero.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<Params, NetError> {
    let mut rng = XorShift64Star::new(seed);
    let layers = spec
        .param_shapes()?
        .into_iter()
        .map(|slot| {
            slot.map(|(w_shape, b_shape)| {
                let fan_in: usize = w_shape[1..].iter().product();
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n: usize = w_shape.iter().product();
                let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
                LayerParams {
                    weight: Tensor { shape: w_shape, data },
                    bias: Tensor::zeros(b_shape),
                }
            })
        })
        .collect();
    Params::from_layers(spec.clone(), seed, layers)
}

/// Activations cached by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    params_id: u64,
    /// Input to each layer.
    inputs: Vec<Tensor>,
    /// For max-pool layers, the flat input index each output was taken from.
    argmax: Vec<Option<Vec<usize>>>,
    output_shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerParams>>,
    /// Gradient with respect to the network input (empty when not requested).
    pub input: Option<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &Params) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|slot| {
                    slot.as_ref().map(|p| LayerParams {
                        weight: Tensor::zeros(p.weight.shape.clone()),
                        bias: Tensor::zeros(p.bias.shape.clone()),
                    })
                })
                .collect(),
            input: None,
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.weight.add_assign(&b.weight);
                a.bias.add_assign(&b.bias);
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for p in self.layers.iter_mut().flatten() {
            p.weight.scale(k);
            p.bias.scale(k);
        }
    }
}

fn conv2d_forward(x: &Tensor, p: &LayerParams) -> Tensor {
    let [ic, ih, iw] = [x.shape[0], x.shape[1], x.shape[2]];
    let [oc, _, kh, kw] = [p.weight.shape[0], p.weight.shape[1], p.weight.shape[2], p.weight.shape[3]];
    let (oh, ow) = (ih - kh + 1, iw - kw + 1);
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(p.bias.data[o]);
        for c in 0..ic {
            let input = &x.data[c * ih * iw..(c + 1) * ih * iw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let w = p.weight.data[((o * ic + c) * kh + ky) * kw + kx];
                    for y in 0..oh {
                        let src = &input[(y + ky) * iw + kx..(y + ky) * iw + kx + ow];
                        let dst = &mut plane[y * ow..(y + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
    Tensor {
        shape: vec![oc, oh, ow],
        data: out,
    }
}

fn conv2d_backward(
    x: &Tensor,
    p: &LayerParams,
    grad_out: &Tensor,
    need_input: bool,
) -> (LayerParams, Option<Tensor>) {
    let [ic, ih, iw] = [x.shape[0], x.shape[1], x.shape[2]];
    let [oc, _, kh, kw] = [p.weight.shape[0], p.weight.shape[1], p.weight.shape[2], p.weight.shape[3]];
    let (oh, ow) = (ih - kh + 1, iw - kw + 1);
    let mut dw = vec![0.0; p.weight.data.len()];
    let mut db = vec![0.0; oc];
    let mut dx = if need_input { vec![0.0; x.data.len()] } else { Vec::new() };
    for o in 0..oc {
        let g = &grad_out.data[o * oh * ow..(o + 1) * oh * ow];
        db[o] = g.iter().sum();
        for c in 0..ic {
            let input = &x.data[c * ih * iw..(c + 1) * ih * iw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let widx = ((o * ic + c) * kh + ky) * kw + kx;
                    let mut acc = 0.0;
                    for y in 0..oh {
                        let src = &input[(y + ky) * iw + kx..(y + ky) * iw + kx + ow];
                        let gr = &g[y * ow..(y + 1) * ow];
                        acc += gr.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                    dw[widx] = acc;
                    if need_input {
                        let w = p.weight.data[widx];
                        let dplane = &mut dx[c * ih * iw..(c + 1) * ih * iw];
                        for y in 0..oh {
                            let dst = &mut dplane[(y + ky) * iw + kx..(y + ky) * iw + kx + ow];
                            let gr = &g[y * ow..(y + 1) * ow];
                            for (d, gv) in dst.iter_mut().zip(gr) {
                                *d += w * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (
        LayerParams {
            weight: Tensor { shape: p.weight.shape.clone(), data: dw },
            bias: Tensor { shape: p.bias.shape.clone(), data: db },
        },
        need_input.then(|| Tensor { shape: x.shape.clone(), data: dx }),
    )
}

/// 2x2 / stride 2 max pool; odd trailing rows/columns are dropped. Ties go
/// to the first element in row-major window order.
fn maxpool_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let [c, h, w] = [x.shape[0], x.shape[1], x.shape[2]];
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let top = base + 2 * y * w + 2 * xx;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x.data[cand] > x.data[best] {
                        best = cand;
                    }
                }
                out.push(x.data[best]);
                idx.push(best);
            }
        }
    }
    (
        Tensor {
            shape: vec![c, oh, ow],
            data: out,
        },
        idx,
    )
}

fn dense_forward(x: &Tensor, p: &LayerParams) -> Tensor {
    let n_in = x.data.len();
    let data = p
        .weight
        .data
        .chunks_exact(n_in)
        .zip(&p.bias.data)
        .map(|(row, b)| b + row.iter().zip(&x.data).map(|(w, v)| w * v).sum::<f64>())
        .collect::<Vec<_>>();
    Tensor {
        shape: vec![data.len()],
        data,
    }
}

fn dense_backward(
    x: &Tensor,
    p: &LayerParams,
    grad_out: &Tensor,
    need_input: bool,
) -> (LayerParams, Option<Tensor>) {
    let n_in = x.data.len();
    let mut dw = vec![0.0; p.weight.data.len()];
    let mut dx = if need_input { vec![0.0; n_in] } else { Vec::new() };
    for (o, &g) in grad_out.data.iter().enumerate() {
        let row = &mut dw[o * n_in..(o + 1) * n_in];
        for (d, v) in row.iter_mut().zip(&x.data) {
            *d = g * v;
        }
        if need_input {
            let wrow = &p.weight.data[o * n_in..(o + 1) * n_in];
            for (d, w) in dx.iter_mut().zip(wrow) {
                *d += g * w;
            }
        }
    }
    (
        LayerParams {
            weight: Tensor { shape: p.weight.shape.clone(), data: dw },
            bias: Tensor { shape: p.bias.shape.clone(), data: grad_out.data.clone() },
        },
        need_input.then(|| Tensor { shape: x.shape.clone(), data: dx }),
    )
}

fn check_input(params: &Params, x: &Tensor) -> Result<(), NetError> {
    if x.shape != params.spec.input {
        return Err(NetError::ShapeMismatch {
            expected: params.spec.input.to_vec(),
            got: x.shape.clone(),
        });
    }
    Ok(())
}

fn apply_layer(layer: &Layer, p: Option<&LayerParams>, x: &Tensor) -> (Tensor, Option<Vec<usize>>) {
    match layer {
        Layer::Conv2d { .. } => (conv2d_forward(x, p.expect("conv params")), None),
        Layer::Dense { .. } => (dense_forward(x, p.expect("dense params")), None),
        Layer::Relu => (
            Tensor {
                shape: x.shape.clone(),
                data: x.data.iter().map(|v| v.max(0.0)).collect(),
            },
            None,
        ),
        Layer::MaxPool2x2 => {
            let (t, idx) = maxpool_forward(x);
            (t, Some(idx))
        }
        Layer::Flatten => (
            Tensor {
                shape: vec![x.data.len()],
                data: x.data.clone(),
            },
            None,
        ),
    }
}

/// Runs the network, recording what [`backward`] needs.
pub fn forward(params: &Params, x: &Tensor) -> Result<(Tensor, Tape), NetError> {
    check_input(params, x)?;
    let n = params.spec.layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut argmax = Vec::with_capacity(n);
    let mut cur = x.clone();
    for (layer, p) in params.spec.layers.iter().zip(&params.layers) {
        let (next, idx) = apply_layer(layer, p.as_ref(), &cur);
        inputs.push(cur);
        argmax.push(idx);
        cur = next;
    }
    if cur.data.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonFinite("forward"));
    }
    let tape = Tape {
        params_id: params.id,
        inputs,
        argmax,
        output_shape: cur.shape.clone(),
    };
    Ok((cur, tape))
}

/// Forward pass without a tape.
pub fn predict(params: &Params, x: &Tensor) -> Result<Tensor, NetError> {
    check_input(params, x)?;
    let mut cur = x.clone();
    for (layer, p) in params.spec.layers.iter().zip(&params.layers) {
        cur = apply_layer(layer, p.as_ref(), &cur).0;
    }
    if cur.data.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonFinite("forward"));
    }
    Ok(cur)
}

/// Exact gradients of `<upstream, forward(params, x)>` with respect to all
/// parameters and to the input.
pub fn backward(params: &Params, tape: &Tape, upstream: &Tensor) -> Result<Gradients, NetError> {
    backward_impl(params, tape, upstream, true)
}

/// As [`backward`], skipping the input gradient.
pub fn backward_params(
    params: &Params,
    tape: &Tape,
    upstream: &Tensor,
) -> Result<Gradients, NetError> {
    backward_impl(params, tape, upstream, false)
}

fn backward_impl(
    params: &Params,
    tape: &Tape,
    upstream: &Tensor,
    want_input: bool,
) -> Result<Gradients, NetError> {
    if tape.params_id != params.id || tape.inputs.len() != params.layers.len() {
        return Err(NetError::StaleTape);
    }
    if upstream.shape != tape.output_shape {
        return Err(NetError::ShapeMismatch {
            expected: tape.output_shape.clone(),
            got: upstream.shape.clone(),
        });
    }
    let n = params.layers.len();
    let mut layer_grads: Vec<Option<LayerParams>> = vec![None; n];
    let mut grad = upstream.clone();
    for i in (0..n).rev() {
        let x = &tape.inputs[i];
        let need_input = want_input || i > 0;
        grad = match params.spec.layers[i] {
            Layer::Conv2d { .. } => {
                let (g, dx) = conv2d_backward(x, params.layers[i].as_ref().unwrap(), &grad, need_input);
                layer_grads[i] = Some(g);
                match dx {
                    Some(dx) => dx,
                    None => break,
                }
            }
            Layer::Dense { .. } => {
                let (g, dx) = dense_backward(x, params.layers[i].as_ref().unwrap(), &grad, need_input);
                layer_grads[i] = Some(g);
                match dx {
                    Some(dx) => dx,
                    None => break,
                }
            }
            Layer::Relu => Tensor {
                shape: x.shape.clone(),
                data: x
                    .data
                    .iter()
                    .zip(&grad.data)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect(),
            },
            Layer::MaxPool2x2 => {
                let idx = tape.argmax[i].as_ref().ok_or(NetError::StaleTape)?;
                let mut dx = vec![0.0; x.data.len()];
                for (&j, &g) in idx.iter().zip(&grad.data) {
                    dx[j] += g;
                }
                Tensor { shape: x.shape.clone(), data: dx }
            }
            Layer::Flatten => Tensor {
                shape: x.shape.clone(),
                data: grad.data,
            },
        };
    }
    Ok(Gradients {
        layers: layer_grads,
        input: want_input.then_some(grad),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Option<LayerParams>>,
    pub v: Vec<Option<LayerParams>>,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        let zeros = Gradients::zeros_like(params).layers;
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut Params,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NetError> {
    let aligned = grads.layers.len() == params.layers.len()
        && state.m.len() == params.layers.len()
        && params.layers.iter().zip(&grads.layers).all(|(p, g)| match (p, g) {
            (Some(p), Some(g)) => p.weight.shape == g.weight.shape && p.bias.shape == g.bias.shape,
            (None, None) => true,
            _ => false,
        });
    if !aligned {
        return Err(NetError::InvalidSpec("gradients do not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let slots = params
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()));
    for ((p, g), (m, v)) in slots {
        let (Some(p), Some(g), Some(m), Some(v)) = (p, g, m, v) else {
            continue;
        };
        let pairs = [
            (&mut p.weight, &g.weight, &mut m.weight, &mut v.weight),
            (&mut p.bias, &g.bias, &mut m.bias, &mut v.bias),
        ];
        for (pt, gt, mt, vt) in pairs {
            for (((w, &gr), mm), vv) in pt.data.iter_mut().zip(&gt.data).zip(mt.data.iter_mut()).zip(vt.data.iter_mut()) {
                *mm = cfg.beta1 * *mm + (1.0 - cfg.beta1) * gr;
                *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gr * gr;
                let m_hat = *mm / c1;
                let v_hat = *vv / c2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }
    Ok(())
}
