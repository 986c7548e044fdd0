//! Behavior cloning from depth images.
//!
//! The policy maps a 32x32 normalized depth image to (v, omega) through two
//! stride-2 3x3 convolutions (8 and 16 filters, no padding) and a
//! fully-connected head of 256, 128, 64 and 2 units. Every layer except the
//! last is followed by a rectifier. Gradients are computed by hand-written
//! backpropagation in f64 and reduced in a fixed order, so training is
//! bit-reproducible for a given seed.

use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{ControlError, Controller, Observation};
use crate::rng;
use crate::tensorfile::{self, Tensor};
use crate::vehicle::{Action, DepthImage};

pub const SIDE: usize = 32;
pub const CONV1: usize = 8;
pub const CONV2: usize = 16;
const K: usize = 3;
const STRIDE: usize = 2;
pub const SIDE1: usize = (SIDE - K) / STRIDE + 1; // 15
pub const SIDE2: usize = (SIDE1 - K) / STRIDE + 1; // 7
pub const FLAT: usize = CONV2 * SIDE2 * SIDE2; // 784
pub const HEAD: [usize; 4] = [256, 128, 64, 2];
pub const MAGIC: &[u8; 5] = b"VWBC1";

#[derive(Debug, Error)]
pub enum BcError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("params io: {0}")]
    Io(#[from] io::Error),
}

/// Shapes of the twelve parameter tensors, in storage order.
pub fn layer_shapes() -> Vec<Vec<usize>> {
    let mut shapes = vec![vec![CONV1, 1, K, K], vec![CONV1], vec![CONV2, CONV1, K, K], vec![CONV2]];
    let mut fan_in = FLAT;
    for out in HEAD {
        shapes.push(vec![out, fan_in]);
        shapes.push(vec![out]);
        fan_in = out;
    }
    shapes
}

/// Network weights; also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct BcParams {
    pub tensors: Vec<Tensor>,
}

impl BcParams {
    pub fn zeros() -> Self {
        Self { tensors: layer_shapes().iter().map(|s| Tensor::zeros(s)).collect() }
    }

    /// Zero weights with the final bias set, so the policy outputs a constant.
    pub fn constant(v: f64, omega: f64) -> Self {
        let mut p = Self::zeros();
        let last = p.tensors.len() - 1;
        p.tensors[last].data.copy_from_slice(&[v, omega]);
        p
    }

    /// Uniform in +-sqrt(6 / (fan_in + fan_out)) per weight tensor, zero
    /// biases.
    pub fn init(seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let mut p = Self::zeros();
        for t in p.tensors.iter_mut().filter(|t| t.shape.len() > 1) {
            let receptive: usize = t.shape[2..].iter().product();
            let fan_in = t.shape[1] * receptive;
            let fan_out = t.shape[0] * receptive;
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut t.data {
                *w = r.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_shapes(&self) -> Result<(), BcError> {
        let want = layer_shapes();
        if self.tensors.len() != want.len() {
            return Err(BcError::Shape(format!("expected {} tensors, got {}", want.len(), self.tensors.len())));
        }
        for (i, (t, s)) in self.tensors.iter().zip(&want).enumerate() {
            if &t.shape != s || t.data.len() != s.iter().product::<usize>() {
                return Err(BcError::Shape(format!("tensor {i}: expected {s:?}, got {:?}", t.shape)));
            }
        }
        if self.tensors.iter().flat_map(|t| &t.data).any(|v| !v.is_finite()) {
            return Err(BcError::Shape("non-finite parameter".into()));
        }
        Ok(())
    }

    fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.fill(0.0);
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x *= c;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn write_to(&self, w: impl io::Write) -> io::Result<()> {
        let refs: Vec<&Tensor> = self.tensors.iter().collect();
        tensorfile::write(w, MAGIC, &refs)
    }

    pub fn read_from(r: impl io::Read) -> Result<Self, BcError> {
        let p = Self { tensors: tensorfile::read(r, MAGIC)? };
        p.check_shapes()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), BcError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BcError> {
        Self::read_from(&std::fs::read(path)?[..])
    }
}

/// A 32x32 image with values in (0, 1].
pub type Image = Vec<f64>;

/// 1-D area-pooling weights from `n` input samples to `m` outputs.
fn pool_weights(n: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = n as f64 / m as f64;
    (0..m)
        .map(|i| {
            let (lo, hi) = (i as f64 * ratio, (i + 1) as f64 * ratio);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n);
            (first..last)
                .filter_map(|k| {
                    let overlap = (hi.min(k as f64 + 1.0) - lo.max(k as f64)).max(0.0);
                    (overlap > 0.0).then_some((k, overlap / ratio))
                })
                .collect()
        })
        .collect()
}

/// Area-average a square image down to `side` x `side`.
pub fn area_pool(data: &[f64], n: usize, side: usize) -> Vec<f64> {
    if n % side == 0 {
        let b = n / side;
        let norm = (b * b) as f64;
        let mut out = vec![0.0; side * side];
        for (i, row) in out.chunks_mut(side).enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for r in i * b..(i + 1) * b {
                    acc += data[r * n + j * b..r * n + (j + 1) * b].iter().sum::<f64>();
                }
                *cell = acc / norm;
            }
        }
        return out;
    }
    let w = pool_weights(n, side);
    let mut out = vec![0.0; side * side];
    for (i, wi) in w.iter().enumerate() {
        for (j, wj) in w.iter().enumerate() {
            let mut acc = 0.0;
            for (r, a) in wi {
                for (c, b) in wj {
                    acc += a * b * data[r * n + c];
                }
            }
            out[i * side + j] = acc;
        }
    }
    out
}

/// Downsample a square depth image to 32x32 and scale meters to (0, 1].
pub fn preprocess(depth: &DepthImage) -> Result<Image, BcError> {
    if depth.width != depth.height {
        return Err(BcError::Shape(format!("depth image {}x{} is not square", depth.width, depth.height)));
    }
    if depth.width < SIDE {
        return Err(BcError::Shape(format!("depth image side {} is below {SIDE}", depth.width)));
    }
    if depth.data.len() != depth.width * depth.height {
        return Err(BcError::Shape("depth buffer length does not match its dimensions".into()));
    }
    let pooled = area_pool(&depth.data, depth.width, SIDE);
    Ok(pooled.into_iter().map(|d| d / DepthImage::MAX_RANGE).collect())
}

/// Activations kept for backpropagation.
struct Trace {
    a1: Vec<f64>,
    a2: Vec<f64>,
    hidden: [Vec<f64>; 3],
    out: [f64; 2],
}

fn conv_forward(w: &[f64], b: &[f64], input: &[f64], channels: usize, side: usize, out_ch: usize) -> Vec<f64> {
    let os = (side - K) / STRIDE + 1;
    let mut out = vec![0.0; out_ch * os * os];
    for o in 0..out_ch {
        for i in 0..os {
            for j in 0..os {
                let mut acc = b[o];
                for c in 0..channels {
                    let wb = ((o * channels + c) * K) * K;
                    let ib = c * side * side;
                    for ki in 0..K {
                        let row = ib + (STRIDE * i + ki) * side + STRIDE * j;
                        for kj in 0..K {
                            acc += w[wb + ki * K + kj] * input[row + kj];
                        }
                    }
                }
                out[(o * os + i) * os + j] = acc.max(0.0);
            }
        }
    }
    out
}

fn dense_forward(w: &[f64], b: &[f64], input: &[f64], relu: bool) -> Vec<f64> {
    let n = input.len();
    b.iter()
        .enumerate()
        .map(|(o, bias)| {
            let z = bias + w[o * n..(o + 1) * n].iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
            if relu {
                z.max(0.0)
            } else {
                z
            }
        })
        .collect()
}

fn trace(p: &BcParams, x: &[f64]) -> Trace {
    let t = &p.tensors;
    let a1 = conv_forward(&t[0].data, &t[1].data, x, 1, SIDE, CONV1);
    let a2 = conv_forward(&t[2].data, &t[3].data, &a1, CONV1, SIDE1, CONV2);
    let h1 = dense_forward(&t[4].data, &t[5].data, &a2, true);
    let h2 = dense_forward(&t[6].data, &t[7].data, &h1, true);
    let h3 = dense_forward(&t[8].data, &t[9].data, &h2, true);
    let o = dense_forward(&t[10].data, &t[11].data, &h3, false);
    Trace { a1, a2, hidden: [h1, h2, h3], out: [o[0], o[1]] }
}

fn check_input(x: &[f64]) -> Result<(), BcError> {
    if x.len() != SIDE * SIDE {
        return Err(BcError::Shape(format!("expected {} inputs, got {}", SIDE * SIDE, x.len())));
    }
    Ok(())
}

/// Raw network output (v, omega), unclamped.
pub fn forward(params: &BcParams, x: &[f64]) -> Result<(f64, f64), BcError> {
    check_input(x)?;
    params.check_shapes()?;
    let out = trace(params, x).out;
    Ok((out[0], out[1]))
}

/// One supervised pair: preprocessed image and demonstrated (v, omega).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Image,
    pub a: [f64; 2],
}

fn weighted_sq(r: [f64; 2], h: [f64; 2]) -> f64 {
    h[0] * r[0] * r[0] + h[1] * r[1] * r[1]
}

/// Sum over the batch of (a - f(x))^T H (a - f(x)) with diagonal H.
pub fn loss(params: &BcParams, batch: &[Sample], h: [f64; 2]) -> f64 {
    batch
        .iter()
        .map(|s| {
            let o = trace(params, &s.x).out;
            weighted_sq([s.a[0] - o[0], s.a[1] - o[1]], h)
        })
        .sum()
}

/// Write the gradient of one sample into `g`, which must be zeroed.
fn backward(p: &BcParams, x: &[f64], tr: &Trace, dout: [f64; 2], g: &mut BcParams) {
    let t = &p.tensors;

    // dense head, last to first
    let inputs: [&[f64]; 4] = [&tr.a2, &tr.hidden[0], &tr.hidden[1], &tr.hidden[2]];
    let mut delta: Vec<f64> = dout.to_vec();
    for layer in (0..4).rev() {
        let wi = 4 + 2 * layer;
        let input = inputs[layer];
        let n = input.len();
        {
            let gw = &mut g.tensors[wi].data;
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (gwi, xi) in gw[o * n..(o + 1) * n].iter_mut().zip(input) {
                        *gwi += d * xi;
                    }
                }
            }
        }
        g.tensors[wi + 1].data.copy_from_slice(&delta);
        let w = &t[wi].data;
        let mut prev = vec![0.0; n];
        for (o, d) in delta.iter().enumerate() {
            if *d != 0.0 {
                for (pi, wv) in prev.iter_mut().zip(&w[o * n..(o + 1) * n]) {
                    *pi += d * wv;
                }
            }
        }
        // rectifier on the layer input (every input but the raw image is post-relu)
        for (pi, xi) in prev.iter_mut().zip(input) {
            if *xi <= 0.0 {
                *pi = 0.0;
            }
        }
        delta = prev;
    }

    // delta now holds dL/dz2 for the second convolution
    let da1 = conv_backward(&t[2].data, &tr.a1, CONV1, SIDE1, CONV2, &delta, g, 2);
    let dz1: Vec<f64> = da1.iter().zip(&tr.a1).map(|(d, a)| if *a > 0.0 { *d } else { 0.0 }).collect();
    conv_backward(&t[0].data, x, 1, SIDE, CONV1, &dz1, g, 0);
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    w: &[f64],
    input: &[f64],
    channels: usize,
    side: usize,
    out_ch: usize,
    dz: &[f64],
    g: &mut BcParams,
    wi: usize,
) -> Vec<f64> {
    let os = (side - K) / STRIDE + 1;
    let mut din = vec![0.0; channels * side * side];
    for o in 0..out_ch {
        for i in 0..os {
            for j in 0..os {
                let d = dz[(o * os + i) * os + j];
                if d == 0.0 {
                    continue;
                }
                g.tensors[wi + 1].data[o] += d;
                for c in 0..channels {
                    let wb = ((o * channels + c) * K) * K;
                    let ib = c * side * side;
                    for ki in 0..K {
                        let row = ib + (STRIDE * i + ki) * side + STRIDE * j;
                        for kj in 0..K {
                            g.tensors[wi].data[wb + ki * K + kj] += d * input[row + kj];
                            din[row + kj] += d * w[wb + ki * K + kj];
                        }
                    }
                }
            }
        }
    }
    din
}

/// Loss and its exact gradient: per-sample gradients summed in batch order.
pub fn loss_and_gradient(params: &BcParams, batch: &[Sample], h: [f64; 2]) -> (f64, BcParams) {
    let mut total = BcParams::zeros();
    let mut scratch = BcParams::zeros();
    let mut l = 0.0;
    for s in batch {
        let tr = trace(params, &s.x);
        let r = [s.a[0] - tr.out[0], s.a[1] - tr.out[1]];
        let dout = [-2.0 * h[0] * r[0], -2.0 * h[1] * r[1]];
        l += weighted_sq(r, h);
        scratch.fill_zero();
        backward(params, &s.x, &tr, dout, &mut scratch);
        total.add_assign(&scratch);
    }
    (l, total)
}

pub fn gradient(params: &BcParams, batch: &[Sample], h: [f64; 2]) -> BcParams {
    loss_and_gradient(params, batch, h).1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub h: [f64; 2],
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            h: [1.0, 1.0],
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), BcError> {
        let positive = [self.h[0], self.h[1], self.learning_rate, self.beta1, self.beta2, self.epsilon];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.batch_size == 0 {
            return Err(BcError::Config(format!("{self:?}")));
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(BcError::Config("moment decay rates must be below 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: BcParams,
    /// Mean per-sample loss over the whole dataset: before training, then
    /// after every epoch.
    pub losses: Vec<f64>,
}

struct Adam {
    m: BcParams,
    v: BcParams,
    step: i32,
}

impl Adam {
    fn new() -> Self {
        Self { m: BcParams::zeros(), v: BcParams::zeros(), step: 0 }
    }

    fn update(&mut self, params: &mut BcParams, grad: &BcParams, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grad.tensors)
            .zip(&mut self.m.tensors)
            .zip(&mut self.v.tensors)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
                v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = m.data[i] / c1;
                let vhat = v.data[i] / c2;
                p.data[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Fit a policy from scratch with minibatch adaptive-moment descent.
pub fn train(samples: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome, BcError> {
    train_from(BcParams::init(rng::derive(cfg.seed, 1)), samples, cfg)
}

/// Continue training from `init`. Shuffling is seeded from `cfg.seed`.
pub fn train_from(init: BcParams, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome, BcError> {
    if samples.is_empty() {
        return Err(BcError::Data("no training samples".into()));
    }
    cfg.validate()?;
    init.check_shapes()?;
    for s in samples {
        check_input(&s.x)?;
        if !(s.a[0].is_finite() && s.a[1].is_finite()) {
            return Err(BcError::Data("non-finite action label".into()));
        }
    }
    let n = samples.len() as f64;
    let mut params = init;
    let mut losses = vec![loss(&params, samples, cfg.h) / n];
    let mut adam = Adam::new();
    let mut shuffle = rng::seeded(rng::derive(cfg.seed, 2));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|i| samples[*i].clone()));
            let grad = gradient(&params, &batch, cfg.h);
            adam.update(&mut params, &grad, cfg);
        }
        losses.push(loss(&params, samples, cfg.h) / n);
    }
    Ok(TrainOutcome { params, losses })
}

/// Clamp the network output to the action bounds; locks and low gear fixed.
pub fn bc_act(params: &BcParams, obs: &Observation) -> Result<Action, ControlError> {
    let depth = obs.depth.as_ref().ok_or(ControlError::MissingDepth)?;
    let x = preprocess(depth).map_err(|e| ControlError::Policy(e.to_string()))?;
    let (v, omega) = forward(params, &x).map_err(|e| ControlError::Policy(e.to_string()))?;
    Ok(Action::locked_low(v, omega).clamped())
}

/// A trained network used as a [`Controller`].
#[derive(Debug, Clone)]
pub struct BcPolicy {
    pub label: String,
    pub params: BcParams,
}

impl BcPolicy {
    pub fn new(label: impl Into<String>, params: BcParams) -> Self {
        Self { label: label.into(), params }
    }
}

impl Controller for BcPolicy {
    fn id(&self) -> String {
        self.label.clone()
    }

    fn needs_depth(&self) -> bool {
        true
    }

    fn reset(&mut self) {}

    fn act(&mut self, obs: &Observation) -> Result<Action, ControlError> {
        bc_act(&self.params, obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::GroundSpeed;

    fn random_sample(r: &mut rng::Rng) -> Sample {
        Sample {
            x: (0..SIDE * SIDE).map(|_| r.random_range(0.05..1.0)).collect(),
            a: [r.random_range(-1.0..1.0), r.random_range(-0.35..0.35)],
        }
    }

    #[test]
    fn architecture() {
        assert_eq!((SIDE1, SIDE2, FLAT), (15, 7, 784));
        let shapes = layer_shapes();
        assert_eq!(shapes.len(), 12);
        assert_eq!(shapes[4], vec![256, 784]);
        assert_eq!(shapes[10], vec![2, 64]);
        BcParams::init(3).check_shapes().unwrap();
    }

    #[test]
    fn preprocess_pooling() {
        let img = DepthImage::constant(64, 64, 5.0);
        assert!(preprocess(&img).unwrap().iter().all(|v| *v == 1.0));

        let mut check = DepthImage::constant(64, 64, 1.0);
        for r in 0..64 {
            for c in 0..64 {
                if (r + c) % 2 == 1 {
                    check.data[r * 64 + c] = 3.0;
                }
            }
        }
        assert!(preprocess(&check).unwrap().iter().all(|v| (*v - 0.4).abs() < 1e-15));

        let big = DepthImage {
            width: 512,
            height: 512,
            fov: 1.571,
            data: (0..512 * 512).map(|i| 0.5 + (i % 7) as f64 * 0.3).collect(),
        };
        let out = preprocess(&big).unwrap();
        assert_eq!(out.len(), 1024);
        let mut block = 0.0;
        for r in 0..16 {
            for c in 16..32 {
                block += big.data[r * 512 + c];
            }
        }
        assert!((out[1] - block / 256.0 / 5.0).abs() < 1e-12);

        let odd = DepthImage { width: 48, height: 48, fov: 1.571, data: vec![2.5; 48 * 48] };
        assert!(preprocess(&odd).unwrap().iter().all(|v| (*v - 0.5).abs() < 1e-12));
        let rect = DepthImage { width: 64, height: 32, fov: 1.571, data: vec![1.0; 64 * 32] };
        assert!(matches!(preprocess(&rect), Err(BcError::Shape(_))));
        let small = DepthImage::constant(16, 16, 1.0);
        assert!(preprocess(&small).is_err());
    }

    #[test]
    fn forward_trivial_networks() {
        let x = vec![0.5; SIDE * SIDE];
        assert_eq!(forward(&BcParams::zeros(), &x).unwrap(), (0.0, 0.0));
        assert_eq!(forward(&BcParams::constant(0.5, 0.1), &x).unwrap(), (0.5, 0.1));
        assert!(forward(&BcParams::zeros(), &x[1..]).is_err());
    }

    #[test]
    fn loss_examples() {
        let p = BcParams::constant(0.4, 0.2);
        let x = vec![0.5; SIDE * SIDE];
        let s = Sample { x: x.clone(), a: [0.5, 0.0] };
        assert!((loss(&p, &[s.clone()], [1.0, 1.0]) - 0.05).abs() < 1e-15);
        assert!((loss(&p, &[s], [2.0, 1.0]) - 0.06).abs() < 1e-15);
        let exact = Sample { x, a: [0.4, 0.2] };
        assert_eq!(loss(&p, &[exact.clone()], [1.0, 1.0]), 0.0);
        assert!(gradient(&p, &[exact], [1.0, 1.0]).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradient_is_additive_and_scales_with_h() {
        let mut r = rng::seeded(11);
        let p = BcParams::init(5);
        let batch: Vec<Sample> = (0..3).map(|_| random_sample(&mut r)).collect();
        let whole = gradient(&p, &batch, [1.0, 2.0]);
        let mut parts = BcParams::zeros();
        for s in &batch {
            parts.add_assign(&gradient(&p, std::slice::from_ref(s), [1.0, 2.0]));
        }
        assert!(whole.iter().zip(parts.iter()).all(|(a, b)| a == b));

        // powers of two keep the scaling exact
        let (l1, g1) = loss_and_gradient(&p, &batch, [1.0, 2.0]);
        let (l4, g4) = loss_and_gradient(&p, &batch, [4.0, 8.0]);
        assert_eq!(l4, 4.0 * l1);
        assert!(g1.iter().zip(g4.iter()).all(|(a, b)| *b == 4.0 * a));
    }

    #[test]
    fn zero_epochs_returns_init() {
        let mut r = rng::seeded(2);
        let samples: Vec<Sample> = (0..5).map(|_| random_sample(&mut r)).collect();
        let cfg = TrainConfig { epochs: 0, seed: 9, ..TrainConfig::default() };
        let out = train(&samples, &cfg).unwrap();
        assert_eq!(out.params, BcParams::init(rng::derive(9, 1)));
        assert_eq!(out.losses.len(), 1);
        assert!(matches!(train(&[], &cfg), Err(BcError::Data(_))));
    }

    #[test]
    fn serialization_round_trip() {
        let p = BcParams::init(77);
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"VWBC1");
        let q = BcParams::read_from(&buf[..]).unwrap();
        assert!(p.iter().zip(q.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut bad = buf.clone();
        bad[13] = 3; // corrupt the first tensor's rank
        assert!(BcParams::read_from(&bad[..]).is_err());
    }

    #[test]
    fn act_clamps_and_locks() {
        let obs = Observation {
            depth: Some(DepthImage::constant(32, 32, 2.0)),
            w: [0.0; 4],
            g: GroundSpeed::default(),
            t: 0.0,
        };
        let a = bc_act(&BcParams::constant(0.5, 0.1), &obs).unwrap();
        assert_eq!(a, Action { v: 0.5, omega: 0.1, d: (true, true), s: true });
        let a = bc_act(&BcParams::constant(2.0, -1.0), &obs).unwrap();
        assert_eq!((a.v, a.omega), (1.0, -0.35));
        let blind = Observation { depth: None, ..obs };
        assert!(matches!(bc_act(&BcParams::zeros(), &blind), Err(ControlError::MissingDepth)));
    }
}
