//! Dense feedforward networks over a flat parameter vector.
//!
//! Hidden layers use the logistic sigmoid. The output layer is either a
//! softmax trained with cross-entropy (classifiers) or the identity trained
//! with half squared error (q-value regressors).
//!
//! Parameter layout, layer by layer from input to output: the `n_out x n_in`
//! weight matrix in row-major order (row = output unit), followed by the
//! `n_out` biases when the architecture has biases.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    SoftmaxXent,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
    head: OutputHead,
    bias: bool,
}

/// Offsets of one layer inside a [`ParamVector`].
#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    weights: usize,
    biases: Option<usize>,
    n_in: usize,
    n_out: usize,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, head: OutputHead) -> Result<Self> {
        Self::with_bias(layer_sizes, head, true)
    }

    pub fn with_bias(layer_sizes: Vec<usize>, head: OutputHead, bias: bool) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "architecture needs at least 2 layers, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config(format!("layer sizes must be positive: {layer_sizes:?}")));
        }
        Ok(Self {
            layer_sizes,
            head,
            bias,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        let extra = usize::from(self.bias);
        self.layer_sizes.windows(2).map(|w| (w[0] + extra) * w[1]).sum()
    }

    /// `(fan_in, fan_out)` of each weight layer.
    pub fn fans(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_sizes.windows(2).map(|w| (w[0], w[1]))
    }

    /// Parameter index ranges owned by each layer (weights and biases together).
    pub fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.slots()
            .map(|s| {
                let end = s.biases.map_or(s.weights + s.n_in * s.n_out, |b| b + s.n_out);
                s.weights..end
            })
            .collect()
    }

    fn slots(&self) -> impl Iterator<Item = LayerSlot> + '_ {
        let bias = self.bias;
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = offset;
            offset += n_in * n_out;
            let biases = bias.then(|| {
                let b = offset;
                offset += n_out;
                b
            });
            LayerSlot {
                weights,
                biases,
                n_in,
                n_out,
            }
        })
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        Ok(())
    }
}

/// Flat vector of network weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(&self.0)
    }

    /// `self + scale * dir`, elementwise.
    pub fn axpy(&self, scale: f64, dir: &[f64]) -> Self {
        Self(self.0.iter().zip(dir).map(|(x, d)| x + scale * d).collect())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl FromIterator<f64> for ParamVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    /// Class probabilities (softmax head) or raw outputs (identity head).
    pub output: Vec<f64>,
    /// `activations[0]` is the input; `activations[l]` the output of layer `l`
    /// before the head is applied to the last one.
    pub activations: Vec<Vec<f64>>,
}

/// Training targets for a batch.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// Class index per sample (softmax head).
    Labels(&'a [usize]),
    /// Flat row-major target vectors, one row of `output_width` per sample (identity head).
    Values(&'a [f64]),
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// `log(sum(exp(z)))`, shifted by the max for stability.
fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Reusable per-layer buffers so batch loops do not allocate per sample.
struct Workspace {
    slots: Vec<LayerSlot>,
    /// Post-activation values; the last entry holds raw logits/outputs.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(arch: &Architecture) -> Self {
        let acts = arch.layer_sizes.iter().map(|&n| vec![0.0; n]).collect();
        let deltas = arch.layer_sizes.iter().map(|&n| vec![0.0; n]).collect();
        Self {
            slots: arch.slots().collect(),
            acts,
            deltas,
        }
    }

    /// Fills `acts`; the final layer is left un-normalized (logits).
    fn forward(&mut self, arch: &Architecture, params: &[f64], input: &[f64]) -> Result<()> {
        self.acts[0].copy_from_slice(input);
        let last = arch.num_layers() - 1;
        for (l, slot) in self.slots.iter().enumerate() {
            let (prev, rest) = self.acts.split_at_mut(l + 1);
            let a_in = &prev[l];
            let a_out = &mut rest[0];
            for j in 0..slot.n_out {
                let row = &params[slot.weights + j * slot.n_in..slot.weights + (j + 1) * slot.n_in];
                let mut z: f64 = row.iter().zip(a_in.iter()).map(|(w, a)| w * a).sum();
                if let Some(b) = slot.biases {
                    z += params[b + j];
                }
                if !z.is_finite() {
                    return Err(Error::NumericOverflow { layer: l });
                }
                a_out[j] = if l == last { z } else { sigmoid(z) };
            }
        }
        Ok(())
    }

    /// Loss of the sample whose forward pass is in `acts`; leaves dLoss/dz of
    /// the output layer in the last delta buffer.
    fn output_delta(&mut self, arch: &Architecture, target: SampleTarget<'_>) -> f64 {
        let out = self.acts.last().unwrap();
        let delta = self.deltas.last_mut().unwrap();
        match target {
            SampleTarget::Label(k) => {
                let loss = log_sum_exp(out) - out[k];
                delta.copy_from_slice(out);
                softmax_in_place(delta);
                delta[k] -= 1.0;
                debug_assert_eq!(arch.head, OutputHead::SoftmaxXent);
                loss
            }
            SampleTarget::Values(y) => {
                let mut loss = 0.0;
                for ((d, o), t) in delta.iter_mut().zip(out).zip(y) {
                    *d = o - t;
                    loss += 0.5 * *d * *d;
                }
                loss
            }
        }
    }

    fn backward(&mut self, params: &[f64], grad: &mut [f64]) {
        for (l, slot) in self.slots.iter().enumerate().rev() {
            let a_in = &self.acts[l];
            let (lower, upper) = self.deltas.split_at_mut(l + 1);
            let delta = &upper[0];
            for j in 0..slot.n_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let g = &mut grad[slot.weights + j * slot.n_in..slot.weights + (j + 1) * slot.n_in];
                for (gi, ai) in g.iter_mut().zip(a_in) {
                    *gi += dj * ai;
                }
                if let Some(b) = slot.biases {
                    grad[b + j] += dj;
                }
            }
            if l == 0 {
                break;
            }
            let below = &mut lower[l];
            for (i, bi) in below.iter_mut().enumerate() {
                let mut s = 0.0;
                for j in 0..slot.n_out {
                    s += params[slot.weights + j * slot.n_in + i] * delta[j];
                }
                let a = a_in[i];
                *bi = s * a * (1.0 - a);
            }
        }
    }
}

#[derive(Clone, Copy)]
enum SampleTarget<'a> {
    Label(usize),
    Values(&'a [f64]),
}

fn check_input(arch: &Architecture, input: &[f64]) -> Result<()> {
    if input.len() != arch.input_width() {
        return Err(Error::DimensionMismatch {
            what: "network input",
            expected: arch.input_width(),
            got: input.len(),
        });
    }
    Ok(())
}

pub fn forward(arch: &Architecture, params: &[f64], input: &[f64]) -> Result<ForwardResult> {
    arch.check_params(params)?;
    check_input(arch, input)?;
    let mut ws = Workspace::new(arch);
    ws.forward(arch, params, input)?;
    let mut output = ws.acts.last().unwrap().clone();
    if arch.head == OutputHead::SoftmaxXent {
        softmax_in_place(&mut output);
    }
    Ok(ForwardResult {
        output,
        activations: ws.acts,
    })
}

/// Validates a batch and returns the number of samples.
fn check_batch(arch: &Architecture, params: &[f64], inputs: &[f64], targets: Targets<'_>) -> Result<usize> {
    arch.check_params(params)?;
    let d = arch.input_width();
    if inputs.is_empty() || !inputs.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            what: "batch inputs (flat rows)",
            expected: d,
            got: inputs.len(),
        });
    }
    let n = inputs.len() / d;
    match (targets, arch.head) {
        (Targets::Labels(labels), OutputHead::SoftmaxXent) => {
            if labels.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "batch labels",
                    expected: n,
                    got: labels.len(),
                });
            }
            let k = arch.output_width();
            if let Some((row, &bad)) = labels.iter().enumerate().find(|(_, &t)| t >= k) {
                return Err(Error::Validation {
                    row,
                    msg: format!("label {bad} outside [0, {k})"),
                });
            }
        }
        (Targets::Values(values), OutputHead::Identity) => {
            let expected = n * arch.output_width();
            if values.len() != expected {
                return Err(Error::DimensionMismatch {
                    what: "batch target values",
                    expected,
                    got: values.len(),
                });
            }
        }
        _ => return Err(Error::Config("target kind does not match the output head".into())),
    }
    Ok(n)
}

fn sample_target<'a>(targets: Targets<'a>, i: usize, k: usize) -> SampleTarget<'a> {
    match targets {
        Targets::Labels(l) => SampleTarget::Label(l[i]),
        Targets::Values(v) => SampleTarget::Values(&v[i * k..(i + 1) * k]),
    }
}

/// Mean loss over the batch without computing a gradient.
pub fn loss(arch: &Architecture, params: &[f64], inputs: &[f64], targets: Targets<'_>) -> Result<f64> {
    let n = check_batch(arch, params, inputs, targets)?;
    let (d, k) = (arch.input_width(), arch.output_width());
    let mut ws = Workspace::new(arch);
    let mut total = 0.0;
    for i in 0..n {
        ws.forward(arch, params, &inputs[i * d..(i + 1) * d])?;
        total += ws.output_delta(arch, sample_target(targets, i, k));
    }
    Ok(total / n as f64)
}

/// Mean loss over the batch and its exact gradient with respect to `params`.
///
/// Softmax head: mean cross-entropy. Identity head: mean of `0.5 * |y - t|^2`,
/// whose gradient is the `(y - t) * dQ/dtheta` direction used for q-learning.
pub fn loss_and_gradient(
    arch: &Architecture,
    params: &[f64],
    inputs: &[f64],
    targets: Targets<'_>,
) -> Result<(f64, ParamVector)> {
    let n = check_batch(arch, params, inputs, targets)?;
    let (d, k) = (arch.input_width(), arch.output_width());
    let mut ws = Workspace::new(arch);
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    for i in 0..n {
        ws.forward(arch, params, &inputs[i * d..(i + 1) * d])?;
        total += ws.output_delta(arch, sample_target(targets, i, k));
        ws.backward(params, &mut grad);
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((total * inv, ParamVector(grad)))
}
