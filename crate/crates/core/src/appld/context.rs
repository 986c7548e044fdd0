//! Context classifier: multinomial logistic regression over a fixed
//! 71-dimensional observation feature, plus a sliding-window mode filter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bclearn::area_pool;
use crate::controllers::Observation;
use crate::tensorfile::{self, Tensor};
use crate::vehicle::DepthImage;

use super::AppldError;

pub const POOL_SIDE: usize = 8;
pub const FEATURE_DIM: usize = POOL_SIDE * POOL_SIDE + 4 + 3;
pub const DEFAULT_WINDOW: usize = 10;
pub const ITERATIONS: usize = 500;
pub const LEARNING_RATE: f64 = 0.1;
pub const MAGIC: &[u8; 5] = b"VWCM1";

pub type Features = [f64; FEATURE_DIM];

/// 8x8 area-pooled depth in meters, then w, then (dx, dy, z).
/// Without a depth image the pooled block reads the maximum range.
pub fn features(obs: &Observation) -> Features {
    let mut f = [0.0; FEATURE_DIM];
    match &obs.depth {
        Some(d) if d.width == d.height && d.width >= POOL_SIDE => {
            f[..64].copy_from_slice(&area_pool(&d.data, d.width, POOL_SIDE));
        }
        _ => f[..64].fill(DepthImage::MAX_RANGE),
    }
    f[64..68].copy_from_slice(&obs.w);
    f[68] = obs.g.dx;
    f[69] = obs.g.dy;
    f[70] = obs.g.z_clearance;
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextModel {
    /// K x FEATURE_DIM, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub window: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    contexts: usize,
    feature_dim: usize,
    window: usize,
    phi_file: String,
}

impl ContextModel {
    pub fn k(&self) -> usize {
        self.bias.len()
    }

    fn logits(&self, x: &Features) -> Vec<f64> {
        let z: Vec<f64> = x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect();
        (0..self.k())
            .map(|k| self.bias[k] + self.weights[k * FEATURE_DIM..(k + 1) * FEATURE_DIM].iter().zip(&z).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Most probable context (1-based) for one frame; ties go to the lower id.
    pub fn classify(&self, x: &Features) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (k, l) in logits.iter().enumerate() {
            if *l > logits[best] {
                best = k;
            }
        }
        best + 1
    }

    pub fn probabilities(&self, x: &Features) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn accuracy(&self, xs: &[Features], labels: &[usize]) -> f64 {
        let hits = xs.iter().zip(labels).filter(|(x, l)| self.classify(x) == **l).count();
        hits as f64 / xs.len().max(1) as f64
    }

    pub fn validate(&self) -> Result<(), AppldError> {
        let k = self.k();
        if k == 0 || self.window == 0 {
            return Err(AppldError::Model("need at least one context and a window of at least 1".into()));
        }
        if self.weights.len() != k * FEATURE_DIM || self.mean.len() != FEATURE_DIM || self.scale.len() != FEATURE_DIM {
            return Err(AppldError::Model("tensor sizes do not match the context count".into()));
        }
        if self.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(AppldError::Model("feature scales must be positive".into()));
        }
        Ok(())
    }

    /// Writes `<path>` (TOML header) and `<path>.bin` (tensors).
    pub fn save(&self, path: &Path) -> Result<(), AppldError> {
        let bin = bin_path(path);
        let header = Header {
            contexts: self.k(),
            feature_dim: FEATURE_DIM,
            window: self.window,
            phi_file: bin.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        std::fs::write(path, toml::to_string(&header).map_err(|e| AppldError::Model(e.to_string()))?)?;
        let k = self.k();
        let tensors = [
            Tensor { shape: vec![k, FEATURE_DIM], data: self.weights.clone() },
            Tensor { shape: vec![k], data: self.bias.clone() },
            Tensor { shape: vec![FEATURE_DIM], data: self.mean.clone() },
            Tensor { shape: vec![FEATURE_DIM], data: self.scale.clone() },
        ];
        let mut buf = Vec::new();
        tensorfile::write(&mut buf, MAGIC, &tensors.iter().collect::<Vec<_>>())?;
        std::fs::write(bin, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AppldError> {
        let header: Header =
            toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| AppldError::Model(e.to_string()))?;
        if header.feature_dim != FEATURE_DIM {
            return Err(AppldError::Model(format!("feature_dim {} is not {FEATURE_DIM}", header.feature_dim)));
        }
        let bin = path.with_file_name(&header.phi_file);
        let mut t = tensorfile::read(&std::fs::read(bin)?[..], MAGIC)?;
        if t.len() != 4 {
            return Err(AppldError::Model(format!("expected 4 tensors, found {}", t.len())));
        }
        let scale = t.pop().unwrap().data;
        let mean = t.pop().unwrap().data;
        let bias = t.pop().unwrap().data;
        let weights = t.pop().unwrap().data;
        let model = Self { weights, bias, mean, scale, window: header.window };
        model.validate()?;
        if model.k() != header.contexts {
            return Err(AppldError::Model("context count differs between header and tensors".into()));
        }
        Ok(model)
    }
}

fn bin_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".bin");
    s.into()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Fit the classifier by full-batch gradient ascent on the mean
/// log-likelihood, starting from zero weights. Labels are 1..=K and every
/// class needs at least `min_per_class` examples.
pub fn train_context_classifier(
    xs: &[Features],
    labels: &[usize],
    min_per_class: usize,
    window: usize,
) -> Result<ContextModel, AppldError> {
    if xs.is_empty() || xs.len() != labels.len() {
        return Err(AppldError::Data("features and labels must be non-empty and equally long".into()));
    }
    if window == 0 {
        return Err(AppldError::Params("window must be at least 1".into()));
    }
    let k = *labels.iter().max().unwrap();
    if labels.contains(&0) {
        return Err(AppldError::Data("context labels start at 1".into()));
    }
    for c in 1..=k {
        let count = labels.iter().filter(|l| **l == c).count();
        if count < min_per_class.max(1) {
            return Err(AppldError::Data(format!("context {c} has {count} examples, need {}", min_per_class.max(1))));
        }
    }
    let n = xs.len() as f64;
    let mut mean = vec![0.0; FEATURE_DIM];
    for x in xs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; FEATURE_DIM];
    for x in xs {
        for ((s, v), m) in scale.iter_mut().zip(x).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    // constant features carry no information; leave them centered at zero
    for s in &mut scale {
        *s = if *s > 1e-18 { s.sqrt() } else { 1.0 };
    }
    let zs: Vec<Vec<f64>> =
        xs.iter().map(|x| x.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect()).collect();

    let mut model = ContextModel { weights: vec![0.0; k * FEATURE_DIM], bias: vec![0.0; k], mean, scale, window };
    if k == 1 {
        return Ok(model);
    }
    for _ in 0..ITERATIONS {
        let mut gw = vec![0.0; k * FEATURE_DIM];
        let mut gb = vec![0.0; k];
        for (z, label) in zs.iter().zip(labels) {
            let logits: Vec<f64> = (0..k)
                .map(|c| model.bias[c] + model.weights[c * FEATURE_DIM..(c + 1) * FEATURE_DIM].iter().zip(z).map(|(w, v)| w * v).sum::<f64>())
                .collect();
            let p = softmax(&logits);
            for c in 0..k {
                let r = if c + 1 == *label { 1.0 } else { 0.0 } - p[c];
                gb[c] += r / n;
                for (g, v) in gw[c * FEATURE_DIM..(c + 1) * FEATURE_DIM].iter_mut().zip(z) {
                    *g += r * v / n;
                }
            }
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w += LEARNING_RATE * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b += LEARNING_RATE * g;
        }
    }
    Ok(model)
}

/// Majority vote over per-frame predictions (oldest first). Ties go to the
/// most recent frame's prediction when it is among the tied ids, else to the
/// tied id predicted most recently.
pub fn mode_filter(preds: &[usize]) -> Result<usize, AppldError> {
    let last = *preds.last().ok_or_else(|| AppldError::Data("empty prediction window".into()))?;
    let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
    for p in preds {
        *counts.entry(*p).or_default() += 1;
    }
    let top = *counts.values().max().unwrap();
    if counts[&last] == top {
        return Ok(last);
    }
    Ok(*preds.iter().rev().find(|p| counts[*p] == top).unwrap())
}

/// Context for the newest frame given up to `window` recent feature vectors.
pub fn predict_context(model: &ContextModel, recent: &[Features]) -> Result<usize, AppldError> {
    let start = recent.len().saturating_sub(model.window);
    let preds: Vec<usize> = recent[start..].iter().map(|x| model.classify(x)).collect();
    mode_filter(&preds)
}
