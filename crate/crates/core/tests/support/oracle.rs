//! Test-only reference evaluations of the behavior-cloning network.
//!
//! `naive_forward` re-implements the network arithmetic directly from the
//! tensor layout. `fd_gradient` estimates every partial derivative of the
//! loss by central differences. Each perturbed loss is evaluated by re-running
//! the network from the perturbed layer onward, reusing cached activations of
//! the untouched layers and the untouched units of the perturbed layer.

#![allow(dead_code)]

use verti_core::bclearn::{BcParams, Sample};

const SIDE: usize = 32;

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|z| if *z > 0.0 { *z } else { 0.0 }).collect()
}

/// Stride-2 valid 3x3 convolution, returning pre-activations.
fn conv(w: &[f64], b: &[f64], input: &[f64], ch: usize, side: usize, out_ch: usize) -> Vec<f64> {
    let os = (side - 3) / 2 + 1;
    let mut z = Vec::with_capacity(out_ch * os * os);
    for o in 0..out_ch {
        for i in 0..os {
            for j in 0..os {
                z.push(conv_unit(w, b, input, ch, side, o, i, j));
            }
        }
    }
    z
}

#[allow(clippy::too_many_arguments)]
fn conv_unit(w: &[f64], b: &[f64], input: &[f64], ch: usize, side: usize, o: usize, i: usize, j: usize) -> f64 {
    let mut acc = b[o];
    for c in 0..ch {
        for ki in 0..3 {
            for kj in 0..3 {
                let wv = w[o * ch * 9 + c * 9 + ki * 3 + kj];
                acc += wv * input[c * side * side + (2 * i + ki) * side + 2 * j + kj];
            }
        }
    }
    acc
}

fn dense_unit(w: &[f64], b: &[f64], input: &[f64], o: usize) -> f64 {
    let n = input.len();
    let mut acc = b[o];
    for k in 0..n {
        acc += w[o * n + k] * input[k];
    }
    acc
}

fn dense(w: &[f64], b: &[f64], input: &[f64]) -> Vec<f64> {
    (0..b.len()).map(|o| dense_unit(w, b, input, o)).collect()
}

/// Pre-activations of every layer for one input.
#[derive(Clone)]
struct Cache {
    z: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
}

fn run(p: &BcParams, x: &[f64]) -> Cache {
    let t = &p.tensors;
    let z1 = conv(&t[0].data, &t[1].data, x, 1, SIDE, 8);
    let a1 = relu(&z1);
    let z2 = conv(&t[2].data, &t[3].data, &a1, 8, 15, 16);
    let a2 = relu(&z2);
    let z3 = dense(&t[4].data, &t[5].data, &a2);
    let a3 = relu(&z3);
    let z4 = dense(&t[6].data, &t[7].data, &a3);
    let a4 = relu(&z4);
    let z5 = dense(&t[8].data, &t[9].data, &a4);
    let a5 = relu(&z5);
    let z6 = dense(&t[10].data, &t[11].data, &a5);
    Cache { z: vec![z1, z2, z3, z4, z5, z6.clone()], a: vec![a1, a2, a3, a4, a5, z6] }
}

pub fn naive_forward(p: &BcParams, x: &[f64]) -> [f64; 2] {
    let out = &run(p, x).a[5];
    [out[0], out[1]]
}

fn sample_loss(out: &[f64], a: [f64; 2], h: [f64; 2]) -> f64 {
    let r0 = a[0] - out[0];
    let r1 = a[1] - out[1];
    h[0] * r0 * r0 + h[1] * r1 * r1
}

/// Run dense layers `first..4` on the post-activation `input`.
fn head_from(p: &BcParams, first: usize, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    for layer in first..4 {
        let z = dense(&p.tensors[4 + 2 * layer].data, &p.tensors[5 + 2 * layer].data, &x);
        x = if layer == 3 { z } else { relu(&z) };
    }
    x
}

fn perturbed_loss(p: &BcParams, c: &Cache, x: &[f64], a: [f64; 2], h: [f64; 2], ti: usize, idx: usize) -> f64 {
    let t = &p.tensors;
    let out = match ti {
        0 | 1 => run(p, x).a[5].clone(),
        2 | 3 => {
            let o = if ti == 2 { idx / 72 } else { idx };
            let mut z2 = c.z[1].clone();
            for i in 0..7 {
                for j in 0..7 {
                    z2[o * 49 + i * 7 + j] = conv_unit(&t[2].data, &t[3].data, &c.a[0], 8, 15, o, i, j);
                }
            }
            head_from(p, 0, &relu(&z2))
        }
        4 | 5 => {
            let o = if ti == 4 { idx / 784 } else { idx };
            let new = dense_unit(&t[4].data, &t[5].data, &c.a[1], o).max(0.0);
            let delta = new - c.a[2][o];
            // next pre-activation differs only through unit o
            let w2 = &t[6].data;
            let z4: Vec<f64> = (0..128).map(|k| c.z[3][k] + w2[k * 256 + o] * delta).collect();
            head_from(p, 2, &relu(&z4))
        }
        6 | 7 => {
            let o = if ti == 6 { idx / 256 } else { idx };
            let mut a4 = c.a[3].clone();
            a4[o] = dense_unit(&t[6].data, &t[7].data, &c.a[2], o).max(0.0);
            head_from(p, 2, &a4)
        }
        8 | 9 => {
            let o = if ti == 8 { idx / 128 } else { idx };
            let mut a5 = c.a[4].clone();
            a5[o] = dense_unit(&t[8].data, &t[9].data, &c.a[3], o).max(0.0);
            head_from(p, 3, &a5)
        }
        _ => dense(&t[10].data, &t[11].data, &c.a[4]),
    };
    sample_loss(&out, a, h)
}

/// Central-difference gradient of the H-weighted loss, flattened in tensor
/// storage order.
pub fn fd_gradient(p: &BcParams, batch: &[Sample], h: [f64; 2], step: f64) -> Vec<f64> {
    let caches: Vec<Cache> = batch.iter().map(|s| run(p, &s.x)).collect();
    let mut work = p.clone();
    let mut grad = Vec::with_capacity(p.len());
    for ti in 0..p.tensors.len() {
        for idx in 0..p.tensors[ti].data.len() {
            let orig = work.tensors[ti].data[idx];
            let mut g = 0.0;
            for (s, c) in batch.iter().zip(&caches) {
                work.tensors[ti].data[idx] = orig + step;
                let plus = perturbed_loss(&work, c, &s.x, s.a, h, ti, idx);
                work.tensors[ti].data[idx] = orig - step;
                let minus = perturbed_loss(&work, c, &s.x, s.a, h, ti, idx);
                g += (plus - minus) / (2.0 * step);
            }
            work.tensors[ti].data[idx] = orig;
            grad.push(g);
        }
    }
    grad
}

/// Relative error with an absolute floor for near-zero partials.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs())).max(floor)
}
