//! Binary segmentation of the demonstrated (v, omega) series.
//!
//! Each action dimension is divided by a robust noise scale before costs are
//! computed, so the split criterion compares a dimensionless cost reduction
//! against `penalty * ln(N)`.

use super::AppldError;

pub const DEFAULT_MIN_SEG_LEN: usize = 20;
pub const DEFAULT_PENALTY: f64 = 4.0;
/// Lower bound on the per-dimension noise scale.
pub const NOISE_FLOOR: f64 = 0.01;

/// Segment boundaries. `taus[k]` is the index of the first frame of segment
/// k + 1; segment k covers `bounds()[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Changepoints {
    pub n: usize,
    pub taus: Vec<usize>,
}

impl Changepoints {
    pub fn single(n: usize) -> Self {
        Self { n, taus: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.taus.len() + 1
    }

    /// Half-open frame ranges of every segment.
    pub fn bounds(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::with_capacity(self.taus.len() + 2);
        edges.push(0);
        edges.extend(&self.taus);
        edges.push(self.n);
        edges.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Context id (1-based) of every frame.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n);
        for (k, (a, b)) in self.bounds().into_iter().enumerate() {
            out.extend(std::iter::repeat_n(k + 1, b - a));
        }
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Noise standard deviation estimated from first differences:
/// MAD(diff) / (0.6745 * sqrt 2), floored at [`NOISE_FLOOR`].
pub fn noise_scale(x: &[f64]) -> f64 {
    if x.len() < 3 {
        return NOISE_FLOOR;
    }
    let diffs: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let med = median(diffs.clone());
    let mad = median(diffs.iter().map(|d| (d - med).abs()).collect());
    (mad / (0.674_489_75 * std::f64::consts::SQRT_2)).max(NOISE_FLOOR)
}

struct Prefix {
    s: Vec<[f64; 2]>,
    q: Vec<[f64; 2]>,
}

impl Prefix {
    fn new(series: &[[f64; 2]]) -> Self {
        let mut s = vec![[0.0; 2]; series.len() + 1];
        let mut q = vec![[0.0; 2]; series.len() + 1];
        for (i, x) in series.iter().enumerate() {
            for d in 0..2 {
                s[i + 1][d] = s[i][d] + x[d];
                q[i + 1][d] = q[i][d] + x[d] * x[d];
            }
        }
        Self { s, q }
    }

    /// Sum of squared deviations from the mean over [a, b).
    fn cost(&self, a: usize, b: usize) -> f64 {
        let n = (b - a) as f64;
        (0..2)
            .map(|d| {
                let s = self.s[b][d] - self.s[a][d];
                let q = self.q[b][d] - self.q[a][d];
                (q - s * s / n).max(0.0)
            })
            .sum()
    }
}

/// Segment a series of (v, omega) pairs.
pub fn segment_series(series: &[[f64; 2]], min_seg_len: usize, penalty: f64) -> Result<Changepoints, AppldError> {
    let n = series.len();
    if min_seg_len == 0 {
        return Err(AppldError::Params("min_seg_len must be at least 1".into()));
    }
    if !(penalty.is_finite() && penalty >= 0.0) {
        return Err(AppldError::Params(format!("penalty must be finite and non-negative, got {penalty}")));
    }
    if n < 2 * min_seg_len {
        return Err(AppldError::Data(format!("{n} frames is fewer than 2 * min_seg_len = {}", 2 * min_seg_len)));
    }
    if series.iter().flatten().any(|x| !x.is_finite()) {
        return Err(AppldError::Data("series contains a non-finite value".into()));
    }
    let scale = [0, 1].map(|d| noise_scale(&series.iter().map(|x| x[d]).collect::<Vec<_>>()));
    let normalized: Vec<[f64; 2]> = series.iter().map(|x| [x[0] / scale[0], x[1] / scale[1]]).collect();
    let prefix = Prefix::new(&normalized);
    let threshold = penalty * (n as f64).ln();

    let mut taus = Vec::new();
    let mut stack = vec![(0, n)];
    while let Some((a, b)) = stack.pop() {
        if b - a < 2 * min_seg_len {
            continue;
        }
        let whole = prefix.cost(a, b);
        let mut best: Option<(usize, f64)> = None;
        for k in a + min_seg_len..=b - min_seg_len {
            let c = prefix.cost(a, k) + prefix.cost(k, b);
            if best.is_none_or(|(_, bc)| c < bc) {
                best = Some((k, c));
            }
        }
        if let Some((k, c)) = best {
            if whole - c > threshold {
                taus.push(k);
                stack.push((k, b));
                stack.push((a, k));
            }
        }
    }
    taus.sort_unstable();
    Ok(Changepoints { n, taus })
}
