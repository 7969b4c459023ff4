//! MLP encoder with a linear softmax classifier, hand-written backward pass,
//! momentum SGD and a parameter EMA shadow.
//!
//! Parameters live in one flat `Vec<f64>`: for every layer, the row-major
//! `[out][in]` weight matrix followed by the `out` biases. Encoder layers come
//! first, the classifier last. Every encoder layer except the final
//! (embedding) layer is followed by the activation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, LossTerm, Result};
use crate::types::{Embedding, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Silu => 1,
            Activation::Tanh => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Silu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Layer widths. `encoder` lists the output width of each encoder layer; its
/// last entry is the embedding dimension. An empty encoder uses the raw input
/// as the embedding, which makes the model a plain softmax regression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub encoder: Vec<usize>,
    pub classes: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl LayerShape {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }
}

impl Architecture {
    pub fn new(input_dim: usize, encoder: Vec<usize>, classes: usize, activation: Activation) -> Result<Self> {
        if input_dim == 0 || encoder.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if classes < 2 {
            return Err(Error::config("classifier needs at least 2 classes"));
        }
        let arch = Self {
            input_dim,
            encoder,
            classes,
            activation,
        };
        if arch.embed_dim() < 2 {
            return Err(Error::config("embedding dimension must be at least 2"));
        }
        Ok(arch)
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.last().copied().unwrap_or(self.input_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| (l.fan_in + 1) * l.fan_out).sum()
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.encoder.len() + 1);
        let mut fan_in = self.input_dim;
        let mut offset = 0;
        for &fan_out in self.encoder.iter().chain(std::iter::once(&self.classes)) {
            shapes.push(LayerShape { fan_in, fan_out, offset });
            offset += (fan_in + 1) * fan_out;
            fan_in = fan_out;
        }
        shapes
    }
}

/// Forward-pass record for a batch, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchForward {
    /// `layer_inputs[i][l]`: input to layer `l` for sample `i`.
    layer_inputs: Vec<Vec<Vec<f64>>>,
    /// `pre_activations[i][l]`: output of encoder layer `l` before activation.
    pre_activations: Vec<Vec<Vec<f64>>>,
    pub embeddings: Vec<Embedding>,
    pub probs: Vec<ProbVector>,
}

impl BatchForward {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Upstream gradients for one recorded batch.
#[derive(Debug, Clone, Default)]
pub struct Upstream {
    pub d_embeddings: Option<Vec<Vec<f64>>>,
    pub d_logits: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    params: Vec<f64>,
}

impl Mlp {
    /// Fan-in scaled uniform init: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for
    /// weights and biases.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut params = vec![0.0; arch.param_count()];
        for layer in arch.layers() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for p in &mut params[layer.offset..layer.biases().end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Self { arch, params }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let params = vec![0.0; arch.param_count()];
        Self { arch, params }
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Embedding, ProbVector)> {
        let (_, _, z, logits) = self.forward_one(x)?;
        Ok((Embedding::new(z)?, ProbVector::softmax(&logits)))
    }

    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<BatchForward> {
        let mut out = BatchForward {
            layer_inputs: Vec::with_capacity(xs.len()),
            pre_activations: Vec::with_capacity(xs.len()),
            embeddings: Vec::with_capacity(xs.len()),
            probs: Vec::with_capacity(xs.len()),
        };
        for x in xs {
            let (inputs, pres, z, logits) = self.forward_one(x)?;
            if z.iter().chain(&logits).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    term: LossTerm::Forward,
                    iteration: 0,
                });
            }
            out.layer_inputs.push(inputs);
            out.pre_activations.push(pres);
            out.embeddings.push(Embedding::new(z)?);
            out.probs.push(ProbVector::softmax(&logits));
        }
        Ok(out)
    }

    /// Returns layer inputs, encoder pre-activations, embedding and logits.
    #[allow(clippy::type_complexity)]
    fn forward_one(&self, x: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
        if x.len() != self.arch.input_dim {
            return Err(Error::contract(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        let layers = self.arch.layers();
        let last_encoder = self.arch.encoder.len();
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pres = Vec::with_capacity(last_encoder);
        let mut h = x.to_vec();
        for (l, layer) in layers.iter().enumerate() {
            let pre = self.affine(layer, &h);
            inputs.push(std::mem::take(&mut h));
            if l < last_encoder {
                h = if l + 1 < last_encoder {
                    pre.iter().map(|&v| self.arch.activation.apply(v)).collect()
                } else {
                    pre.clone()
                };
                pres.push(pre);
            } else {
                let z = inputs[l].clone();
                return Ok((inputs, pres, z, pre));
            }
        }
        unreachable!("classifier layer always present")
    }

    fn affine(&self, layer: &LayerShape, input: &[f64]) -> Vec<f64> {
        let w = &self.params[layer.weights()];
        let b = &self.params[layer.biases()];
        (0..layer.fan_out)
            .map(|o| {
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                b[o] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
            })
            .collect()
    }

    /// Reverse-mode gradient of a scalar loss whose upstream derivatives with
    /// respect to the batch's embeddings and/or logits are given.
    pub fn backward(&self, fwd: &BatchForward, upstream: &Upstream) -> Result<Vec<f64>> {
        let n = fwd.len();
        for g in [&upstream.d_embeddings, &upstream.d_logits].into_iter().flatten() {
            if g.len() != n {
                return Err(Error::contract("upstream gradient batch size mismatch"));
            }
        }
        let layers = self.arch.layers();
        let classifier = layers[layers.len() - 1];
        let last_encoder = self.arch.encoder.len();
        let mut grad = vec![0.0; self.params.len()];
        for i in 0..n {
            let mut d_z = match &upstream.d_embeddings {
                Some(d) => d[i].clone(),
                None => vec![0.0; self.arch.embed_dim()],
            };
            if let Some(d_logits) = &upstream.d_logits {
                let g = &d_logits[i];
                accumulate_affine(&mut grad, &classifier, g, &fwd.layer_inputs[i][last_encoder]);
                let w = &self.params[classifier.weights()];
                for (o, &go) in g.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    let row = &w[o * classifier.fan_in..(o + 1) * classifier.fan_in];
                    for (dz, &wv) in d_z.iter_mut().zip(row) {
                        *dz += go * wv;
                    }
                }
            }
            let mut d_out = d_z;
            for l in (0..last_encoder).rev() {
                let layer = &layers[l];
                let d_pre: Vec<f64> = if l + 1 < last_encoder {
                    d_out
                        .iter()
                        .zip(&fwd.pre_activations[i][l])
                        .map(|(d, &p)| d * self.arch.activation.derivative(p))
                        .collect()
                } else {
                    d_out
                };
                accumulate_affine(&mut grad, layer, &d_pre, &fwd.layer_inputs[i][l]);
                if l == 0 {
                    break;
                }
                let w = &self.params[layer.weights()];
                let mut d_in = vec![0.0; layer.fan_in];
                for (o, &g) in d_pre.iter().enumerate() {
                    let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    for (di, &wv) in d_in.iter_mut().zip(row) {
                        *di += g * wv;
                    }
                }
                d_out = d_in;
            }
        }
        Ok(grad)
    }
}

fn accumulate_affine(grad: &mut [f64], layer: &LayerShape, d_out: &[f64], input: &[f64]) {
    let weights = layer.weights();
    let biases = layer.biases();
    for (o, &g) in d_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &mut grad[weights.start + o * layer.fan_in..weights.start + (o + 1) * layer.fan_in];
        for (r, &x) in row.iter_mut().zip(input) {
            *r += g * x;
        }
        grad[biases.start + o] += g;
    }
}

/// Momentum SGD: `v <- momentum * v + g`, `theta <- theta - lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, param_count: usize) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate {lr} must be positive")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum {momentum} must lie in [0, 1)")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: vec![0.0; param_count],
        })
    }

    pub fn with_velocity(mut self, velocity: Vec<f64>) -> Result<Self> {
        if velocity.len() != self.velocity.len() {
            return Err(Error::format("optimizer state has the wrong length"));
        }
        self.velocity = velocity;
        Ok(self)
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// Applies one step with learning rate `lr`; parameters and velocity are
    /// left untouched when the update would be non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(Error::contract("parameter, gradient and velocity lengths differ"));
        }
        let velocity: Vec<f64> = self
            .velocity
            .iter()
            .zip(grads)
            .map(|(v, g)| self.momentum * v + g)
            .collect();
        let updated: Vec<f64> = params.iter().zip(&velocity).map(|(p, v)| p - lr * v).collect();
        if updated.iter().chain(&velocity).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                term: LossTerm::Update,
                iteration: 0,
            });
        }
        params.copy_from_slice(&updated);
        self.velocity = velocity;
        Ok(())
    }
}

pub fn sgd_step(params: &mut [f64], grads: &[f64], optimizer: &mut Sgd) -> Result<()> {
    let lr = optimizer.lr;
    optimizer.step(params, grads, lr)
}

/// Exponential moving average of the parameters, used for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaShadow {
    pub decay: f64,
    shadow: Vec<f64>,
}

impl EmaShadow {
    pub fn new(decay: f64, params: &[f64]) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::config(format!("EMA decay {decay} must lie in [0, 1]")));
        }
        Ok(Self {
            decay,
            shadow: params.to_vec(),
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.shadow
    }

    pub fn update(&mut self, params: &[f64]) {
        debug_assert_eq!(params.len(), self.shadow.len());
        let d = self.decay;
        for (s, &p) in self.shadow.iter_mut().zip(params) {
            *s = d * *s + (1.0 - d) * p;
        }
    }

    /// A model carrying the shadow weights; the training model is untouched.
    pub fn model(&self, arch: &Architecture) -> Result<Mlp> {
        Mlp::from_params(arch.clone(), self.shadow.clone())
    }
}

pub fn ema_update(shadow: &mut EmaShadow, params: &[f64]) {
    shadow.update(params);
}
