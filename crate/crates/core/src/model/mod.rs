//! Differentiable objectives: a one-hidden-layer MLP classifier with exact
//! backpropagation, and a separable quadratic with known smoothness.

mod checkpoint;
mod quadratic;

pub use checkpoint::{load_params, save_params, CheckpointError};
pub use quadratic::{quadratic_grad, QuadraticObjective};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::LabeledDataset;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Default: with ReLU the full-precision baseline is unstable at `mu = 1`.
    #[default]
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    #[default]
    UniformFanIn,
    /// Weights from `U(-sqrt(6/(fan_in+fan_out)), +...)`.
    GlorotUniform,
}

/// `input -> hidden (activation) -> output` with biases on both layers.
///
/// Flat parameter layout: `W1` (input-major, `input x hidden`), `b1`,
/// `W2` (hidden-major, `hidden x output`), `b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub activation: Activation,
}

impl MlpShape {
    /// 784-30-10 classifier.
    pub fn emnist_digits() -> Self {
        Self {
            input: 784,
            hidden: 30,
            output: 10,
            activation: Activation::Sigmoid,
        }
    }

    pub fn num_params(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.output + self.output
    }

    pub fn w1(&self) -> std::ops::Range<usize> {
        0..self.input * self.hidden
    }

    pub fn b1(&self) -> std::ops::Range<usize> {
        let s = self.w1().end;
        s..s + self.hidden
    }

    pub fn w2(&self) -> std::ops::Range<usize> {
        let s = self.b1().end;
        s..s + self.hidden * self.output
    }

    pub fn b2(&self) -> std::ops::Range<usize> {
        let s = self.w2().end;
        s..s + self.output
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub shape: MlpShape,
}

impl ModelParams {
    pub fn zeros(shape: MlpShape) -> Self {
        Self {
            values: vec![0.0; shape.num_params()],
            shape,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub values: Vec<f64>,
    pub batch_indices: Vec<usize>,
}

/// Random weights, zero biases.
pub fn init_params<R: Rng + ?Sized>(shape: MlpShape, scheme: InitScheme, rng: &mut R) -> ModelParams {
    let mut p = ModelParams::zeros(shape);
    let bound = |fan_in: usize, fan_out: usize| match scheme {
        InitScheme::UniformFanIn => 1.0 / (fan_in as f64).sqrt(),
        InitScheme::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
    };
    let b = bound(shape.input, shape.hidden);
    for w in &mut p.values[shape.w1()] {
        *w = rng.random_range(-b..b);
    }
    let b = bound(shape.hidden, shape.output);
    for w in &mut p.values[shape.w2()] {
        *w = rng.random_range(-b..b);
    }
    p
}

/// Per-sample scratch for forward/backward.
struct Scratch {
    pre: Vec<f64>,
    act: Vec<f64>,
    logits: Vec<f64>,
}

impl Scratch {
    fn new(shape: &MlpShape) -> Self {
        Self {
            pre: vec![0.0; shape.hidden],
            act: vec![0.0; shape.hidden],
            logits: vec![0.0; shape.output],
        }
    }

    /// Fills the activations for sample `i` and returns
    /// `(cross-entropy, predicted class)`. After the call `logits` holds
    /// the softmax probabilities.
    fn forward(&mut self, params: &[f64], shape: &MlpShape, data: &LabeledDataset, i: usize) -> (f64, usize) {
        let h = shape.hidden;
        let c = shape.output;
        let w1 = &params[shape.w1()];
        let w2 = &params[shape.w2()];
        self.pre.copy_from_slice(&params[shape.b1()]);
        let (idx, val) = data.sparse_image(i);
        for (&j, &x) in idx.iter().zip(val) {
            let x = x as f64;
            let row = &w1[j as usize * h..(j as usize + 1) * h];
            for (p, &w) in self.pre.iter_mut().zip(row) {
                *p += x * w;
            }
        }
        for (a, &p) in self.act.iter_mut().zip(&self.pre) {
            *a = shape.activation.apply(p);
        }
        self.logits.copy_from_slice(&params[shape.b2()]);
        for (u, &a) in self.act.iter().enumerate() {
            let row = &w2[u * c..(u + 1) * c];
            for (z, &w) in self.logits.iter_mut().zip(row) {
                *z += a * w;
            }
        }
        let predicted = argmax(&self.logits);
        let max = self.logits[predicted];
        let label = data.label(i);
        let margin = self.logits[label] - max;
        let mut sum = 0.0;
        for z in self.logits.iter_mut() {
            *z = (*z - max).exp();
            sum += *z;
        }
        let loss = sum.ln() - margin;
        for z in self.logits.iter_mut() {
            *z /= sum;
        }
        (loss, predicted)
    }

    /// Accumulates `scale * d(loss_i)/d(params)` into `grad`; call right
    /// after `forward` on the same sample.
    fn backward(&mut self, params: &[f64], shape: &MlpShape, data: &LabeledDataset, i: usize, scale: f64, grad: &mut [f64]) {
        let h = shape.hidden;
        let c = shape.output;
        let w2 = &params[shape.w2()];
        let label = data.label(i);
        // dL/dz = softmax - onehot
        let mut dz = std::mem::take(&mut self.logits);
        dz[label] -= 1.0;
        for v in dz.iter_mut() {
            *v *= scale;
        }
        let (gw1, rest) = grad.split_at_mut(shape.w1().end);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(h * c);
        for (g, &d) in gb2.iter_mut().zip(&dz) {
            *g += d;
        }
        for u in 0..h {
            let a = self.act[u];
            let row = &w2[u * c..(u + 1) * c];
            let grow = &mut gw2[u * c..(u + 1) * c];
            let mut back = 0.0;
            for k in 0..c {
                grow[k] += a * dz[k];
                back += row[k] * dz[k];
            }
            // reuse `pre` as the hidden-layer delta
            self.pre[u] = back * shape.activation.derivative(self.pre[u], a);
        }
        for (g, &d) in gb1.iter_mut().zip(&self.pre) {
            *g += d;
        }
        let (idx, val) = data.sparse_image(i);
        for (&j, &x) in idx.iter().zip(val) {
            let x = x as f64;
            let grow = &mut gw1[j as usize * h..(j as usize + 1) * h];
            for (g, &d) in grow.iter_mut().zip(&self.pre) {
                *g += x * d;
            }
        }
        self.logits = dz;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_shape(params: &ModelParams, data: &LabeledDataset) {
    assert_eq!(params.values.len(), params.shape.num_params(), "parameter length");
    assert_eq!(params.shape.input, data.dim(), "input dimension");
    assert!(params.shape.output >= data.num_classes(), "too few output classes");
}

/// Mean cross-entropy over `indices`.
pub fn forward_loss(params: &ModelParams, data: &LabeledDataset, indices: &[usize]) -> f64 {
    evaluate(params, data, indices).loss
}

/// Loss and accuracy over a set of samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

const EVAL_CHUNK: usize = 512;

/// Mean loss and accuracy over `indices`, chunked so the result does not
/// depend on the number of worker threads.
pub fn evaluate(params: &ModelParams, data: &LabeledDataset, indices: &[usize]) -> Evaluation {
    check_shape(params, data);
    if indices.is_empty() {
        return Evaluation {
            loss: f64::NAN,
            accuracy: f64::NAN,
        };
    }
    let chunks: Vec<&[usize]> = indices.chunks(EVAL_CHUNK).collect();
    let partial = par::map_indexed(chunks.len(), |c| {
        let mut s = Scratch::new(&params.shape);
        let mut loss = 0.0;
        let mut correct = 0usize;
        for &i in chunks[c] {
            let (l, pred) = s.forward(&params.values, &params.shape, data, i);
            loss += l;
            correct += (pred == data.label(i)) as usize;
        }
        (loss, correct)
    });
    let (loss, correct) = partial
        .into_iter()
        .fold((0.0, 0), |(l, c), (pl, pc)| (l + pl, c + pc));
    let n = indices.len() as f64;
    Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    }
}

/// Exact gradient of [`forward_loss`] over `indices` (sequential; the
/// engine parallelizes across devices instead).
pub fn backward(params: &ModelParams, data: &LabeledDataset, indices: &[usize]) -> GradientEstimate {
    check_shape(params, data);
    let mut grad = vec![0.0; params.dim()];
    let mut s = Scratch::new(&params.shape);
    let scale = 1.0 / indices.len() as f64;
    for &i in indices {
        s.forward(&params.values, &params.shape, data, i);
        s.backward(&params.values, &params.shape, data, i, scale, &mut grad);
    }
    GradientEstimate {
        values: grad,
        batch_indices: indices.to_vec(),
    }
}

/// Full-batch gradient over many samples, parallel over fixed chunks with
/// an ordered reduction.
pub fn full_gradient(params: &ModelParams, data: &LabeledDataset, indices: &[usize]) -> Vec<f64> {
    check_shape(params, data);
    let chunks: Vec<&[usize]> = indices.chunks(EVAL_CHUNK * 4).collect();
    let scale = 1.0 / indices.len() as f64;
    let partial = par::map_indexed(chunks.len(), |c| {
        let mut grad = vec![0.0; params.dim()];
        let mut s = Scratch::new(&params.shape);
        for &i in chunks[c] {
            s.forward(&params.values, &params.shape, data, i);
            s.backward(&params.values, &params.shape, data, i, scale, &mut grad);
        }
        grad
    });
    let mut out = vec![0.0; params.dim()];
    for g in partial {
        for (o, v) in out.iter_mut().zip(g) {
            *o += v;
        }
    }
    out
}
