//! Plaintext neural networks: definition, forward pass, hand-derived
//! backprop, SGD, and the fixed-point reference path.
//!
//! Models are small CNN/MLP stacks (dense, conv2d, relu, avgpool, flatten,
//! terminal softmax) over `f64` tensors kept as flat vectors. Training is
//! plain cross-entropy SGD. [`export_for_mpc`] quantizes a trained model into
//! ring tensors for the encrypted evaluation protocol, and
//! [`forward_fixed_point`] evaluates that quantized model with the exact
//! wrapping arithmetic and deterministic truncation the secure kernels
//! emulate — it is the reference the encrypted path is checked against.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ring::{truncate_signed, FixedPointCodec, RingElement, RingError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NeuralError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("input shape {got:?} does not match expected {want:?}")]
    ShapeMismatch { got: Vec<usize>, want: Vec<usize> },
    #[error("gradient needs a nonempty batch")]
    EmptyBatch,
    #[error("evaluation needs a nonempty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Encode(#[from] RingError),
}

/// One architectural layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    AvgPool {
        window: usize,
    },
    Flatten,
    Softmax,
}

/// Ordered layer list plus the input shape it consumes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Checks layer conformability and the terminal-softmax rule; returns the
    /// output shape of every layer.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>, NeuralError> {
        if self.layers.is_empty() {
            return Err(NeuralError::InvalidSpec("no layers".into()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let terminal = i == self.layers.len() - 1;
            match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    if shape != [inputs] {
                        return Err(NeuralError::InvalidSpec(format!(
                            "dense layer {i} expects [{inputs}] but receives {shape:?}"
                        )));
                    }
                    shape = vec![outputs];
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let &[c, h, w] = &shape[..] else {
                        return Err(NeuralError::InvalidSpec(format!(
                            "conv layer {i} needs a [c, h, w] input, got {shape:?}"
                        )));
                    };
                    if c != in_channels || kernel == 0 || stride == 0 || h < kernel || w < kernel {
                        return Err(NeuralError::InvalidSpec(format!(
                            "conv layer {i} incompatible with input {shape:?}"
                        )));
                    }
                    shape = vec![
                        out_channels,
                        (h - kernel) / stride + 1,
                        (w - kernel) / stride + 1,
                    ];
                }
                LayerSpec::Relu => {}
                LayerSpec::AvgPool { window } => {
                    let &[c, h, w] = &shape[..] else {
                        return Err(NeuralError::InvalidSpec(format!(
                            "avgpool layer {i} needs a [c, h, w] input, got {shape:?}"
                        )));
                    };
                    if window == 0 || h % window != 0 || w % window != 0 {
                        return Err(NeuralError::InvalidSpec(format!(
                            "avgpool layer {i} window {window} does not tile {shape:?}"
                        )));
                    }
                    shape = vec![c, h / window, w / window];
                }
                LayerSpec::Flatten => {
                    shape = vec![shape.iter().product()];
                }
                LayerSpec::Softmax => {
                    if !terminal {
                        return Err(NeuralError::InvalidSpec(format!(
                            "softmax at position {i} is not terminal"
                        )));
                    }
                    if shape.len() != 1 {
                        return Err(NeuralError::InvalidSpec(
                            "softmax needs a flat input".into(),
                        ));
                    }
                }
            }
            shapes.push(shape.clone());
        }
        if self.layers.last() != Some(&LayerSpec::Softmax) {
            return Err(NeuralError::InvalidSpec(
                "model must end in a softmax".into(),
            ));
        }
        Ok(shapes)
    }

    /// Number of output classes.
    pub fn num_classes(&self) -> Result<usize, NeuralError> {
        let shapes = self.validate()?;
        Ok(shapes[shapes.len() - 1][0])
    }

    /// Deterministic byte encoding, the basis of the spec digest.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.input_shape.len() as u64).to_le_bytes());
        for &d in &self.input_shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.layers.len() as u64).to_le_bytes());
        for layer in &self.layers {
            match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    out.push(1);
                    out.extend_from_slice(&(inputs as u64).to_le_bytes());
                    out.extend_from_slice(&(outputs as u64).to_le_bytes());
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    out.push(2);
                    out.extend_from_slice(&(in_channels as u64).to_le_bytes());
                    out.extend_from_slice(&(out_channels as u64).to_le_bytes());
                    out.extend_from_slice(&(kernel as u64).to_le_bytes());
                    out.extend_from_slice(&(stride as u64).to_le_bytes());
                }
                LayerSpec::Relu => out.push(3),
                LayerSpec::AvgPool { window } => {
                    out.push(4);
                    out.extend_from_slice(&(window as u64).to_le_bytes());
                }
                LayerSpec::Flatten => out.push(5),
                LayerSpec::Softmax => out.push(6),
            }
        }
        out
    }

    pub fn spec_hash(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_bytes()).into()
    }
}

/// Weight tensors of one layer; mirrors [`LayerSpec`] positionally. The same
/// shape doubles as the gradient container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerParams {
    Dense {
        /// Row-major `[outputs][inputs]`.
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Conv2d {
        /// Row-major `[out_channels][in_channels][kernel][kernel]`.
        kernels: Vec<f64>,
        bias: Vec<f64>,
    },
    Stateless,
}

/// A model's weights, bound to its architecture by the spec digest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub model_id: String,
    pub spec: ModelSpec,
    pub spec_hash: [u8; 32],
    pub layers: Vec<LayerParams>,
    /// Samples used in the most recent training pass.
    pub sample_count: u64,
}

impl ModelParams {
    /// Seeded initialization: weights uniform in `±sqrt(1/fan_in)`, zero bias.
    pub fn init(model_id: impl Into<String>, spec: ModelSpec, seed: u64) -> Result<Self, NeuralError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            layers.push(match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    let bound = libm::sqrt(1.0 / inputs as f64);
                    LayerParams::Dense {
                        weights: (0..inputs * outputs)
                            .map(|_| rng.random_range(-bound..bound))
                            .collect(),
                        bias: vec![0.0; outputs],
                    }
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    let bound = libm::sqrt(1.0 / fan_in as f64);
                    LayerParams::Conv2d {
                        kernels: (0..out_channels * fan_in)
                            .map(|_| rng.random_range(-bound..bound))
                            .collect(),
                        bias: vec![0.0; out_channels],
                    }
                }
                _ => LayerParams::Stateless,
            });
        }
        let spec_hash = spec.spec_hash();
        Ok(ModelParams {
            model_id: model_id.into(),
            spec,
            spec_hash,
            layers,
            sample_count: 0,
        })
    }

    /// Zero-filled parameter set with the same shapes (gradient accumulator).
    pub fn zeros_like(&self) -> Vec<LayerParams> {
        self.layers
            .iter()
            .map(|l| match l {
                LayerParams::Dense { weights, bias } => LayerParams::Dense {
                    weights: vec![0.0; weights.len()],
                    bias: vec![0.0; bias.len()],
                },
                LayerParams::Conv2d { kernels, bias } => LayerParams::Conv2d {
                    kernels: vec![0.0; kernels.len()],
                    bias: vec![0.0; bias.len()],
                },
                LayerParams::Stateless => LayerParams::Stateless,
            })
            .collect()
    }

    /// Deterministic fixed-point encoding of all weight tensors; this is the
    /// byte form models are hashed and stored in on-chain.
    pub fn canonical_fixed_bytes(&self, codec: FixedPointCodec) -> Result<Vec<u8>, NeuralError> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.layers.len() as u64).to_le_bytes());
        for layer in &self.layers {
            match layer {
                LayerParams::Dense { weights, bias } | LayerParams::Conv2d { kernels: weights, bias } => {
                    out.push(1);
                    for tensor in [weights, bias] {
                        out.extend_from_slice(&(tensor.len() as u64).to_le_bytes());
                        for &v in tensor.iter() {
                            out.extend_from_slice(&codec.encode(v)?.raw().to_le_bytes());
                        }
                    }
                }
                LayerParams::Stateless => out.push(0),
            }
        }
        Ok(out)
    }
}

/// Labelled samples with a shared input shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.inputs.len() != self.labels.len() {
            return Err(NeuralError::ShapeMismatch {
                got: vec![self.labels.len()],
                want: vec![self.inputs.len()],
            });
        }
        let expected: usize = self.input_shape.iter().product();
        for input in &self.inputs {
            if input.len() != expected {
                return Err(NeuralError::ShapeMismatch {
                    got: vec![input.len()],
                    want: vec![expected],
                });
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(NeuralError::InvalidSpec(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Copies the samples at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            input_shape: self.input_shape.clone(),
            num_classes: self.num_classes,
        }
    }
}

/// Index of the largest value; ties break toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| libm::exp(x - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_input(params: &ModelParams, x: &[f64]) -> Result<(), NeuralError> {
    let expected: usize = params.spec.input_shape.iter().product();
    if x.len() != expected {
        return Err(NeuralError::ShapeMismatch {
            got: vec![x.len()],
            want: params.spec.input_shape.clone(),
        });
    }
    Ok(())
}

/// Forward pass keeping every intermediate activation (index 0 is the input).
fn forward_trace(params: &ModelParams, x: &[f64]) -> Result<Vec<Vec<f64>>, NeuralError> {
    check_input(params, x)?;
    let shapes = params.spec.validate()?;
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(params.spec.layers.len() + 1);
    acts.push(x.to_vec());
    let mut shape = params.spec.input_shape.clone();
    for (i, layer) in params.spec.layers.iter().enumerate() {
        let input = acts.last().expect("input pushed").clone();
        let out = match (layer, &params.layers[i]) {
            (LayerSpec::Dense { inputs, outputs }, LayerParams::Dense { weights, bias }) => {
                let mut y = vec![0.0; *outputs];
                for o in 0..*outputs {
                    let row = &weights[o * inputs..(o + 1) * inputs];
                    y[o] = row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>() + bias[o];
                }
                y
            }
            (
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                },
                LayerParams::Conv2d { kernels, bias },
            ) => {
                let &[_, ih, iw] = &shape[..] else { unreachable!() };
                let (k, s) = (*kernel, *stride);
                let oh = (ih - k) / s + 1;
                let ow = (iw - k) / s + 1;
                let mut y = vec![0.0; out_channels * oh * ow];
                for o in 0..*out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias[o];
                            for c in 0..*in_channels {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iy = oy * s + ky;
                                        let ix = ox * s + kx;
                                        acc += input[(c * ih + iy) * iw + ix]
                                            * kernels[((o * in_channels + c) * k + ky) * k + kx];
                                    }
                                }
                            }
                            y[(o * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
                y
            }
            (LayerSpec::Relu, _) => input.iter().map(|&v| v.max(0.0)).collect(),
            (LayerSpec::AvgPool { window }, _) => {
                let &[c, ih, iw] = &shape[..] else { unreachable!() };
                let w = *window;
                let (oh, ow) = (ih / w, iw / w);
                let mut y = vec![0.0; c * oh * ow];
                let area = (w * w) as f64;
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for wy in 0..w {
                                for wx in 0..w {
                                    acc += input[(ch * ih + oy * w + wy) * iw + ox * w + wx];
                                }
                            }
                            y[(ch * oh + oy) * ow + ox] = acc / area;
                        }
                    }
                }
                y
            }
            (LayerSpec::Flatten, _) => input,
            (LayerSpec::Softmax, _) => softmax(&input),
            _ => unreachable!("params validated against spec"),
        };
        acts.push(out);
        shape = shapes[i].clone();
    }
    Ok(acts)
}

/// Class probabilities for one input.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
    Ok(forward_trace(params, x)?.pop().expect("nonempty trace"))
}

/// Mean cross-entropy loss over a batch.
pub fn batch_loss(params: &ModelParams, batch: &LabeledDataset) -> Result<f64, NeuralError> {
    if batch.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    let mut total = 0.0;
    for (x, &y) in batch.inputs.iter().zip(&batch.labels) {
        let probs = forward(params, x)?;
        total -= libm::log(probs[y].max(1e-12));
    }
    Ok(total / batch.len() as f64)
}

/// Mean cross-entropy gradient over a batch; shapes mirror the parameters.
pub fn gradient(
    params: &ModelParams,
    batch: &LabeledDataset,
) -> Result<Vec<LayerParams>, NeuralError> {
    if batch.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    let shapes = params.spec.validate()?;
    let mut grads = params.zeros_like();
    for (x, &label) in batch.inputs.iter().zip(&batch.labels) {
        let acts = forward_trace(params, x)?;
        let probs = acts.last().expect("probs");
        // Terminal softmax + cross entropy collapse to probs - onehot at the
        // logits, so the backward walk starts below the softmax.
        let mut delta: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| if i == label { p - 1.0 } else { p })
            .collect();
        for i in (0..params.spec.layers.len() - 1).rev() {
            let input = &acts[i];
            let in_shape = if i == 0 {
                &params.spec.input_shape
            } else {
                &shapes[i - 1]
            };
            delta = match (&params.spec.layers[i], &params.layers[i], &mut grads[i]) {
                (
                    LayerSpec::Dense { inputs, outputs },
                    LayerParams::Dense { weights, .. },
                    LayerParams::Dense {
                        weights: gw,
                        bias: gb,
                    },
                ) => {
                    let mut dx = vec![0.0; *inputs];
                    for o in 0..*outputs {
                        gb[o] += delta[o];
                        for i_in in 0..*inputs {
                            gw[o * inputs + i_in] += delta[o] * input[i_in];
                            dx[i_in] += weights[o * inputs + i_in] * delta[o];
                        }
                    }
                    dx
                }
                (
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                    },
                    LayerParams::Conv2d { kernels, .. },
                    LayerParams::Conv2d {
                        kernels: gk,
                        bias: gb,
                    },
                ) => {
                    let &[_, ih, iw] = &in_shape[..] else { unreachable!() };
                    let (k, s) = (*kernel, *stride);
                    let oh = (ih - k) / s + 1;
                    let ow = (iw - k) / s + 1;
                    let mut dx = vec![0.0; in_channels * ih * iw];
                    for o in 0..*out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let d = delta[(o * oh + oy) * ow + ox];
                                gb[o] += d;
                                for c in 0..*in_channels {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let iy = oy * s + ky;
                                            let ix = ox * s + kx;
                                            let kidx = ((o * in_channels + c) * k + ky) * k + kx;
                                            gk[kidx] += d * input[(c * ih + iy) * iw + ix];
                                            dx[(c * ih + iy) * iw + ix] += d * kernels[kidx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    dx
                }
                (LayerSpec::Relu, _, _) => delta
                    .iter()
                    .zip(input)
                    .map(|(&d, &x)| if x > 0.0 { d } else { 0.0 })
                    .collect(),
                (LayerSpec::AvgPool { window }, _, _) => {
                    let &[c, ih, iw] = &in_shape[..] else { unreachable!() };
                    let w = *window;
                    let (oh, ow) = (ih / w, iw / w);
                    let area = (w * w) as f64;
                    let mut dx = vec![0.0; c * ih * iw];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let d = delta[(ch * oh + oy) * ow + ox] / area;
                                for wy in 0..w {
                                    for wx in 0..w {
                                        dx[(ch * ih + oy * w + wy) * iw + ox * w + wx] += d;
                                    }
                                }
                            }
                        }
                    }
                    dx
                }
                (LayerSpec::Flatten, _, _) => delta,
                _ => unreachable!("softmax is terminal"),
            };
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for grad in grads.iter_mut() {
        match grad {
            LayerParams::Dense { weights, bias } | LayerParams::Conv2d { kernels: weights, bias } => {
                for v in weights.iter_mut().chain(bias.iter_mut()) {
                    *v *= inv;
                }
            }
            LayerParams::Stateless => {}
        }
    }
    Ok(grads)
}

/// One step of `w <- w - lr * g`.
pub fn sgd_step(params: &ModelParams, grads: &[LayerParams], learning_rate: f64) -> ModelParams {
    assert!(learning_rate >= 0.0, "learning rate must be nonnegative");
    let mut out = params.clone();
    for (layer, grad) in out.layers.iter_mut().zip(grads) {
        match (layer, grad) {
            (
                LayerParams::Dense { weights, bias },
                LayerParams::Dense {
                    weights: gw,
                    bias: gb,
                },
            )
            | (
                LayerParams::Conv2d {
                    kernels: weights,
                    bias,
                },
                LayerParams::Conv2d {
                    kernels: gw,
                    bias: gb,
                },
            ) => {
                for (w, g) in weights.iter_mut().zip(gw) {
                    *w -= learning_rate * g;
                }
                for (b, g) in bias.iter_mut().zip(gb) {
                    *b -= learning_rate * g;
                }
            }
            (LayerParams::Stateless, LayerParams::Stateless) => {}
            _ => panic!("gradient shapes do not mirror parameters"),
        }
    }
    out
}

/// Fraction of argmax-correct predictions. Ties break toward the lowest
/// class index.
pub fn evaluate(params: &ModelParams, dataset: &LabeledDataset) -> Result<f64, NeuralError> {
    if dataset.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    let mut correct = 0usize;
    for (x, &y) in dataset.inputs.iter().zip(&dataset.labels) {
        if argmax(&forward(params, x)?) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

// ---------------------------------------------------------------------------
// Fixed-point export and reference forward
// ---------------------------------------------------------------------------

/// Ring-encoded tensors of one parameterized layer.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedLayer {
    /// Dense: `[inputs][outputs]` (transposed for right-multiplication).
    /// Conv: `[oc][ic][k][k]` as in the plaintext layout.
    pub weights: Vec<RingElement>,
    pub bias: Vec<RingElement>,
}

/// A model quantized for secure evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedModel {
    pub spec: ModelSpec,
    pub layers: Vec<Option<QuantizedLayer>>,
    pub frac_bits: u32,
}

/// Encodes every weight tensor with the codec. Dense matrices are stored
/// transposed so the secure pipeline multiplies `[batch, in] x [in, out]`.
pub fn export_for_mpc(
    params: &ModelParams,
    codec: FixedPointCodec,
) -> Result<QuantizedModel, NeuralError> {
    params.spec.validate()?;
    let mut layers = Vec::with_capacity(params.layers.len());
    for (spec, layer) in params.spec.layers.iter().zip(&params.layers) {
        layers.push(match (spec, layer) {
            (LayerSpec::Dense { inputs, outputs }, LayerParams::Dense { weights, bias }) => {
                let mut transposed = vec![RingElement::ZERO; weights.len()];
                for o in 0..*outputs {
                    for i in 0..*inputs {
                        transposed[i * outputs + o] = codec.encode(weights[o * inputs + i])?;
                    }
                }
                Some(QuantizedLayer {
                    weights: transposed,
                    bias: codec.encode_all(bias)?,
                })
            }
            (LayerSpec::Conv2d { .. }, LayerParams::Conv2d { kernels, bias }) => {
                Some(QuantizedLayer {
                    weights: codec.encode_all(kernels)?,
                    bias: codec.encode_all(bias)?,
                })
            }
            _ => None,
        });
    }
    Ok(QuantizedModel {
        spec: params.spec.clone(),
        layers,
        frac_bits: codec.frac_bits(),
    })
}

/// Applies plaintext softmax to decoded logit rows.
pub fn import_probabilities(logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
    logits.iter().map(|row| softmax(row)).collect()
}

/// Reference forward pass in exact ring arithmetic: wrapping products with
/// doubled fractional precision, deterministic arithmetic-shift truncation,
/// exact sign tests. Returns the pre-softmax logits at base precision.
///
/// The secure kernels reconstruct these values up to one truncation unit per
/// rescale, which is what every encrypted-inference bound is stated against.
pub fn forward_fixed_point(
    model: &QuantizedModel,
    x: &[RingElement],
) -> Result<Vec<RingElement>, NeuralError> {
    let shapes = model.spec.validate()?;
    let f = model.frac_bits;
    let codec = FixedPointCodec::new(f);
    let expected: usize = model.spec.input_shape.iter().product();
    if x.len() != expected {
        return Err(NeuralError::ShapeMismatch {
            got: vec![x.len()],
            want: model.spec.input_shape.clone(),
        });
    }
    let mut act = x.to_vec();
    let mut shape = model.spec.input_shape.clone();
    for (i, layer) in model.spec.layers.iter().enumerate() {
        act = match (layer, &model.layers[i]) {
            (LayerSpec::Dense { inputs, outputs }, Some(q)) => {
                let mut y = Vec::with_capacity(*outputs);
                for o in 0..*outputs {
                    let mut acc = RingElement::ZERO;
                    for i_in in 0..*inputs {
                        acc = acc + act[i_in] * q.weights[i_in * outputs + o];
                    }
                    // Bias joins at product precision.
                    acc = acc + RingElement::new(q.bias[o].raw() << f);
                    y.push(truncate_signed(acc, f));
                }
                y
            }
            (
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                },
                Some(q),
            ) => {
                let &[_, ih, iw] = &shape[..] else { unreachable!() };
                let (k, s) = (*kernel, *stride);
                let oh = (ih - k) / s + 1;
                let ow = (iw - k) / s + 1;
                let mut y = Vec::with_capacity(out_channels * oh * ow);
                for o in 0..*out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = RingElement::new(q.bias[o].raw() << f);
                            for c in 0..*in_channels {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iy = oy * s + ky;
                                        let ix = ox * s + kx;
                                        acc = acc
                                            + act[(c * ih + iy) * iw + ix]
                                                * q.weights
                                                    [((o * in_channels + c) * k + ky) * k + kx];
                                    }
                                }
                            }
                            y.push(truncate_signed(acc, f));
                        }
                    }
                }
                y
            }
            (LayerSpec::Relu, _) => act
                .iter()
                .map(|&v| if v.is_negative() { RingElement::ZERO } else { v })
                .collect(),
            (LayerSpec::AvgPool { window }, _) => {
                let &[c, ih, iw] = &shape[..] else { unreachable!() };
                let w = *window;
                let (oh, ow) = (ih / w, iw / w);
                let inv_area = codec
                    .encode(1.0 / (w * w) as f64)
                    .expect("reciprocal encodable");
                let mut y = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = RingElement::ZERO;
                            for wy in 0..w {
                                for wx in 0..w {
                                    acc = acc + act[(ch * ih + oy * w + wy) * iw + ox * w + wx];
                                }
                            }
                            y.push(truncate_signed(acc * inv_area, f));
                        }
                    }
                }
                y
            }
            (LayerSpec::Flatten, _) => act,
            // Softmax happens in the clear after decryption.
            (LayerSpec::Softmax, _) => return Ok(act),
            _ => unreachable!("quantized layers mirror the spec"),
        };
        shape = shapes[i].clone();
    }
    Ok(act)
}
