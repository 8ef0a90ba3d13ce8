//! A small prunable noise-prediction network.
//!
//! The network is an MLP: the input `[x_t, embed(t)]` goes through `L` hidden
//! layers (affine then SiLU) and an affine output layer of width `input_dim`.
//! Weights are stored as `f32` and arithmetic runs in `f64`. Gradients are
//! written out by hand; there is no autodiff graph.

mod adam;
mod checkpoint;

use std::collections::BTreeMap;

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::rng::rng_for;
use crate::schedule::{NoiseSchedule, ScheduleError};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Examples per parallel work unit in loss and gradient evaluation.
const CHUNK: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum DenoiserError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("time embedding dimension must be even, got {0}")]
    OddEmbedding(usize),
    #[error("timestep {t} out of range for T = {len}")]
    TimestepOutOfRange { t: usize, len: usize },
    #[error("shape mismatch: expected {expected}, got {got} ({what})")]
    Shape { what: String, expected: usize, got: usize },
    #[error("invalid mask for layer {layer}: {reason}")]
    InvalidMask { layer: usize, reason: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Architecture of the MLP denoiser.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DenoiserSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub time_embed_dim: usize,
}

impl DenoiserSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, time_embed_dim: usize) -> Result<Self, DenoiserError> {
        let spec = Self {
            input_dim,
            hidden_widths,
            time_embed_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DenoiserError> {
        if self.input_dim == 0 {
            return Err(DenoiserError::InvalidSpec("input_dim must be positive".into()));
        }
        if self.hidden_widths.is_empty() {
            return Err(DenoiserError::InvalidSpec("at least one hidden layer is required".into()));
        }
        if let Some(l) = self.hidden_widths.iter().position(|&w| w == 0) {
            return Err(DenoiserError::InvalidSpec(format!("hidden layer {l} has width 0")));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(DenoiserError::OddEmbedding(self.time_embed_dim));
        }
        Ok(())
    }

    pub fn num_hidden(&self) -> usize {
        self.hidden_widths.len()
    }

    /// `(out, in)` for every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_dim + self.time_embed_dim;
        for &w in &self.hidden_widths {
            shapes.push((w, fan_in));
            fan_in = w;
        }
        shapes.push((self.input_dim, fan_in));
        shapes
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

/// Weight and bias of one affine layer; `weight` is row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn row(&self, o: usize) -> &[f32] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }
}

/// Named `f32` tensors of a denoiser together with the spec they realise.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    spec: DenoiserSpec,
    layers: Vec<LayerParams>,
}

/// Gradient tensors, laid out exactly like [`Parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn zeros_like(p: &Parameters) -> Self {
        Self {
            layers: p
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.out_dim, l.in_dim))
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w *= factor);
            l.bias.iter_mut().for_each(|b| *b *= factor);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|&x| x == 0.0))
    }
}

/// Tensor name of the weight of layer `l`.
pub fn weight_name(l: usize) -> String {
    format!("layer{l}.weight")
}

/// Tensor name of the bias of layer `l`.
pub fn bias_name(l: usize) -> String {
    format!("layer{l}.bias")
}

impl Parameters {
    /// Fan-based uniform init in `±sqrt(6 / (in + out))`, zero biases.
    pub fn init(spec: &DenoiserSpec, seed: u64) -> Result<Self, DenoiserError> {
        spec.validate()?;
        let mut rng = rng_for(seed, "init", 0);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(out_dim, in_dim)| {
                let bound = (6.0 / (in_dim + out_dim) as f64).sqrt() as f32;
                let dist = Uniform::new_inclusive(-bound, bound);
                let weight = (0..out_dim * in_dim).map(|_| dist.sample(&mut rng)).collect();
                LayerParams {
                    out_dim,
                    in_dim,
                    weight,
                    bias: vec![0.0; out_dim],
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// All-zero parameters for `spec`.
    pub fn zeros(spec: &DenoiserSpec) -> Result<Self, DenoiserError> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| LayerParams::zeros(o, i))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Assembles parameters from explicit layers, checking shapes against `spec`.
    pub fn from_layers(spec: DenoiserSpec, layers: Vec<LayerParams>) -> Result<Self, DenoiserError> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(DenoiserError::Shape {
                what: "layer count".into(),
                expected: shapes.len(),
                got: layers.len(),
            });
        }
        for (l, ((out_dim, in_dim), layer)) in shapes.iter().zip(&layers).enumerate() {
            let checks = [
                (weight_name(l), out_dim * in_dim, layer.weight.len()),
                (bias_name(l), *out_dim, layer.bias.len()),
                (format!("{} rows", weight_name(l)), *out_dim, layer.out_dim),
                (format!("{} cols", weight_name(l)), *in_dim, layer.in_dim),
            ];
            for (what, expected, got) in checks {
                if expected != got {
                    return Err(DenoiserError::Shape { what, expected, got });
                }
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    fn input_vector(&self, x_t: &[f64], t: usize) -> Result<Vec<f32>, DenoiserError> {
        if x_t.len() != self.spec.input_dim {
            return Err(DenoiserError::Shape {
                what: "x_t".into(),
                expected: self.spec.input_dim,
                got: x_t.len(),
            });
        }
        let mut input: Vec<f32> = x_t.iter().map(|&v| v as f32).collect();
        input.extend(sinusoid(t, self.spec.time_embed_dim).into_iter().map(|v| v as f32));
        Ok(input)
    }

    /// Predicted noise for one input.
    pub fn forward(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>, DenoiserError> {
        let input = self.input_vector(x_t, t)?;
        Ok(self.run(&input).into_iter().map(f64::from).collect())
    }

    fn run(&self, input: &[f32]) -> Vec<f32> {
        let mut act: Vec<f64> = input.iter().map(|&v| f64::from(v)).collect();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = affine(layer, &act);
            if l < last {
                z.iter_mut().for_each(|v| *v = silu(*v));
            }
            act = z;
        }
        act.into_iter().map(|v| v as f32).collect()
    }

    /// Accumulates the gradient of `scale · ||out - eps||²` for one example into `grads`.
    /// Returns the per-dimension mean squared error.
    fn backprop_one(&self, input: &[f32], eps: &[f64], scale: f64, grads: &mut GradAcc) -> f64 {
        let last = self.layers.len() - 1;
        // Inputs to every layer and pre-activations of hidden layers.
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(last);
        let mut act: Vec<f64> = input.iter().map(|&v| f64::from(v)).collect();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = affine(layer, &act);
            inputs.push(act);
            if l < last {
                act = z.iter().map(|&v| silu(v)).collect();
                pre.push(z);
            } else {
                act = z;
            }
        }
        // The prediction handed to callers is rounded to f32.
        let out: Vec<f64> = act.iter().map(|&v| f64::from(v as f32)).collect();
        let mut sq = 0.0f64;
        let mut delta: Vec<f64> = out
            .iter()
            .zip(eps)
            .map(|(&o, &e)| {
                sq += (o - e) * (o - e);
                2.0 * scale * (o - e)
            })
            .collect();

        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let a = &inputs[l];
            if l < last {
                for (d, &z) in delta.iter_mut().zip(&pre[l]) {
                    *d *= silu_grad(z);
                }
            }
            let (gw, gb) = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, &ai) in row.iter_mut().zip(a) {
                    *g += d * ai;
                }
            }
            if l > 0 {
                let mut next = vec![0.0f64; layer.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    for (n, &w) in next.iter_mut().zip(layer.row(o)) {
                        *n += f64::from(w) * d;
                    }
                }
                delta = next;
            }
        }
        sq / eps.len() as f64
    }
}

/// Gradient accumulator in f64, one `(weight, bias)` pair per layer.
struct GradAcc {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl GradAcc {
    fn zeros_like(p: &Parameters) -> Self {
        Self {
            layers: p
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    fn add(&mut self, other: &GradAcc) {
        for ((aw, ab), (bw, bb)) in self.layers.iter_mut().zip(&other.layers) {
            aw.iter_mut().zip(bw).for_each(|(a, b)| *a += b);
            ab.iter_mut().zip(bb).for_each(|(a, b)| *a += b);
        }
    }

    fn into_gradients(self, p: &Parameters) -> Gradients {
        Gradients {
            layers: p
                .layers
                .iter()
                .zip(self.layers)
                .map(|(l, (w, b))| LayerParams {
                    out_dim: l.out_dim,
                    in_dim: l.in_dim,
                    weight: w.into_iter().map(|v| v as f32).collect(),
                    bias: b.into_iter().map(|v| v as f32).collect(),
                })
                .collect(),
        }
    }
}

fn affine(layer: &LayerParams, input: &[f64]) -> Vec<f64> {
    (0..layer.out_dim)
        .map(|o| {
            layer
                .row(o)
                .iter()
                .zip(input)
                .fold(f64::from(layer.bias[o]), |acc, (&w, x)| acc + f64::from(w) * x)
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn sinusoid(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let t = t as f64;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let omega = 10000f64.powf(-2.0 * j as f64 / dim as f64);
        out[j] = (t * omega).sin();
        out[half + j] = (t * omega).cos();
    }
    out
}

/// Sinusoidal embedding of `t`: `dim/2` sines followed by `dim/2` cosines at
/// frequencies `10000^(-2j/dim)`.
pub fn time_embedding(t: usize, timesteps: usize, dim: usize) -> Result<Vec<f64>, DenoiserError> {
    if dim % 2 != 0 {
        return Err(DenoiserError::OddEmbedding(dim));
    }
    if t >= timesteps {
        return Err(DenoiserError::TimestepOutOfRange { t, len: timesteps });
    }
    Ok(sinusoid(t, dim))
}

/// Anything that predicts noise from `(x_t, t)`.
pub trait EpsModel: Sync {
    fn predict_eps(&self, x_t: &[f64], t: usize) -> Vec<f64>;
}

impl EpsModel for Parameters {
    fn predict_eps(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        self.forward(x_t, t).expect("input dimension checked by caller")
    }
}

/// One training example: clean data, timestep and the noise that corrupts it.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x0: Vec<f64>,
    pub t: usize,
    pub eps: Vec<f64>,
}

fn check_batch(batch: &[Example], dim: usize, schedule: &NoiseSchedule) -> Result<(), DenoiserError> {
    if batch.is_empty() {
        return Err(DenoiserError::EmptyBatch);
    }
    for ex in batch {
        if ex.x0.len() != dim || ex.eps.len() != dim {
            return Err(DenoiserError::Shape {
                what: "example".into(),
                expected: dim,
                got: if ex.x0.len() != dim { ex.x0.len() } else { ex.eps.len() },
            });
        }
        if ex.t >= schedule.len() {
            return Err(DenoiserError::TimestepOutOfRange {
                t: ex.t,
                len: schedule.len(),
            });
        }
    }
    Ok(())
}

/// Mean over the batch of the per-dimension mean squared error between the
/// true noise and the prediction at `forward_diffuse(x0, t, eps)`.
pub fn loss_with<M: EpsModel>(model: &M, dim: usize, batch: &[Example], schedule: &NoiseSchedule) -> Result<f64, DenoiserError> {
    check_batch(batch, dim, schedule)?;
    let partial = par::map_chunks(batch, CHUNK, |chunk| {
        chunk
            .iter()
            .map(|ex| {
                let xt = schedule
                    .forward_diffuse(&ex.x0, ex.t, &ex.eps)
                    .expect("batch validated");
                let pred = model.predict_eps(&xt, ex.t);
                pred.iter()
                    .zip(&ex.eps)
                    .map(|(p, e)| (p - e) * (p - e))
                    .sum::<f64>()
                    / dim as f64
            })
            .sum::<f64>()
    });
    Ok(partial.into_iter().sum::<f64>() / batch.len() as f64)
}

pub fn loss(p: &Parameters, batch: &[Example], schedule: &NoiseSchedule) -> Result<f64, DenoiserError> {
    loss_with(p, p.spec.input_dim, batch, schedule)
}

/// Loss and its exact gradient with respect to every parameter tensor.
pub fn loss_and_grad(p: &Parameters, batch: &[Example], schedule: &NoiseSchedule) -> Result<(f64, Gradients), DenoiserError> {
    let dim = p.spec.input_dim;
    check_batch(batch, dim, schedule)?;
    let scale = 1.0 / (batch.len() * dim) as f64;
    let partial = par::map_chunks(batch, CHUNK, |chunk| {
        let mut g = GradAcc::zeros_like(p);
        let mut sq = 0.0f64;
        for ex in chunk {
            let xt = schedule
                .forward_diffuse(&ex.x0, ex.t, &ex.eps)
                .expect("batch validated");
            let input = p.input_vector(&xt, ex.t).expect("batch validated");
            sq += p.backprop_one(&input, &ex.eps, scale, &mut g);
        }
        (sq, g)
    });
    let mut total = GradAcc::zeros_like(p);
    let mut sq = 0.0;
    for (s, g) in &partial {
        sq += s;
        total.add(g);
    }
    let total = total.into_gradients(p);
    Ok((sq / batch.len() as f64, total))
}

pub fn grad(p: &Parameters, batch: &[Example], schedule: &NoiseSchedule) -> Result<Gradients, DenoiserError> {
    loss_and_grad(p, batch, schedule).map(|(_, g)| g)
}

/// Kept hidden channels per layer, each list sorted and non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PruneMask {
    pub kept: Vec<Vec<usize>>,
}

impl PruneMask {
    /// Keeps every channel.
    pub fn full(spec: &DenoiserSpec) -> Self {
        Self {
            kept: spec.hidden_widths.iter().map(|&w| (0..w).collect()).collect(),
        }
    }

    /// Complement of a per-layer removal map. Unknown layers or indices are errors.
    pub fn from_removals(spec: &DenoiserSpec, remove: &BTreeMap<usize, Vec<usize>>) -> Result<Self, DenoiserError> {
        for (&layer, idx) in remove {
            let width = *spec.hidden_widths.get(layer).ok_or_else(|| DenoiserError::InvalidMask {
                layer,
                reason: format!("no hidden layer {layer} (spec has {})", spec.num_hidden()),
            })?;
            if let Some(&bad) = idx.iter().find(|&&j| j >= width) {
                return Err(DenoiserError::InvalidMask {
                    layer,
                    reason: format!("channel {bad} out of range for width {width}"),
                });
            }
        }
        let kept = spec
            .hidden_widths
            .iter()
            .enumerate()
            .map(|(l, &w)| {
                let gone = remove.get(&l);
                (0..w)
                    .filter(|j| gone.map_or(true, |g| !g.contains(j)))
                    .collect()
            })
            .collect();
        let mask = Self { kept };
        mask.validate(spec)?;
        Ok(mask)
    }

    pub fn validate(&self, spec: &DenoiserSpec) -> Result<(), DenoiserError> {
        if self.kept.len() != spec.num_hidden() {
            return Err(DenoiserError::InvalidMask {
                layer: self.kept.len().min(spec.num_hidden()),
                reason: format!(
                    "mask covers {} layers, spec has {}",
                    self.kept.len(),
                    spec.num_hidden()
                ),
            });
        }
        for (layer, (kept, &width)) in self.kept.iter().zip(&spec.hidden_widths).enumerate() {
            if kept.is_empty() {
                return Err(DenoiserError::InvalidMask {
                    layer,
                    reason: "no channel kept".into(),
                });
            }
            if kept.windows(2).any(|w| w[0] >= w[1]) {
                return Err(DenoiserError::InvalidMask {
                    layer,
                    reason: "kept indices must be strictly increasing".into(),
                });
            }
            if let Some(&bad) = kept.iter().find(|&&j| j >= width) {
                return Err(DenoiserError::InvalidMask {
                    layer,
                    reason: format!("channel {bad} out of range for width {width}"),
                });
            }
        }
        Ok(())
    }

    /// The spec after masking.
    pub fn masked_spec(&self, spec: &DenoiserSpec) -> DenoiserSpec {
        DenoiserSpec {
            input_dim: spec.input_dim,
            hidden_widths: self.kept.iter().map(Vec::len).collect(),
            time_embed_dim: spec.time_embed_dim,
        }
    }

    /// Mask equivalent to applying `self` and then `then`, whose indices refer
    /// to the channels `self` kept.
    pub fn compose(&self, then: &PruneMask) -> Result<PruneMask, DenoiserError> {
        if self.kept.len() != then.kept.len() {
            return Err(DenoiserError::InvalidMask {
                layer: 0,
                reason: "composed masks cover different layer counts".into(),
            });
        }
        let kept = self
            .kept
            .iter()
            .zip(&then.kept)
            .enumerate()
            .map(|(layer, (outer, inner))| {
                inner
                    .iter()
                    .map(|&j| {
                        outer.get(j).copied().ok_or_else(|| DenoiserError::InvalidMask {
                            layer,
                            reason: format!("channel {j} out of range for width {}", outer.len()),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PruneMask { kept })
    }

    pub fn removed_count(&self, spec: &DenoiserSpec) -> usize {
        spec.hidden_widths
            .iter()
            .zip(&self.kept)
            .map(|(w, k)| w - k.len())
            .sum()
    }
}

/// FLOPs of one affine layer, plus the SiLU when it is a hidden layer.
///
/// A multiply-accumulate counts 2, the bias add 1 per output and SiLU 4 per
/// output.
pub fn layer_flops(in_dim: usize, out_dim: usize, hidden: bool) -> u64 {
    let (i, o) = (in_dim as u64, out_dim as u64);
    2 * i * o + o + if hidden { 4 * o } else { 0 }
}

/// FLOPs of a network with the given hidden widths.
pub fn flops_for_widths(input_dim: usize, time_embed_dim: usize, widths: &[usize]) -> u64 {
    let mut fan_in = input_dim + time_embed_dim;
    let mut total = 0;
    for &w in widths {
        total += layer_flops(fan_in, w, true);
        fan_in = w;
    }
    total + layer_flops(fan_in, input_dim, false)
}

/// FLOPs of one forward evaluation, optionally under a mask.
pub fn count_flops(spec: &DenoiserSpec, mask: Option<&PruneMask>) -> Result<u64, DenoiserError> {
    spec.validate()?;
    match mask {
        None => Ok(flops_for_widths(spec.input_dim, spec.time_embed_dim, &spec.hidden_widths)),
        Some(m) => {
            m.validate(spec)?;
            let widths: Vec<usize> = m.kept.iter().map(Vec::len).collect();
            Ok(flops_for_widths(spec.input_dim, spec.time_embed_dim, &widths))
        }
    }
}

/// Structured pruning: keeps the rows (and bias entries) of each hidden layer
/// at the kept indices, and the matching columns of the following layer.
pub fn apply_mask(p: &Parameters, mask: &PruneMask) -> Result<Parameters, DenoiserError> {
    mask.validate(&p.spec)?;
    let spec = mask.masked_spec(&p.spec);
    let hidden = p.spec.num_hidden();
    let mut layers = Vec::with_capacity(p.layers.len());
    for (l, layer) in p.layers.iter().enumerate() {
        let rows: Vec<usize> = if l < hidden {
            mask.kept[l].clone()
        } else {
            (0..layer.out_dim).collect()
        };
        let cols: Vec<usize> = if l == 0 {
            (0..layer.in_dim).collect()
        } else {
            mask.kept[l - 1].clone()
        };
        let mut weight = Vec::with_capacity(rows.len() * cols.len());
        for &r in &rows {
            let row = layer.row(r);
            weight.extend(cols.iter().map(|&c| row[c]));
        }
        layers.push(LayerParams {
            out_dim: rows.len(),
            in_dim: cols.len(),
            weight,
            bias: rows.iter().map(|&r| layer.bias[r]).collect(),
        });
    }
    Parameters::from_layers(spec, layers)
}

#[cfg(test)]
mod tests;
