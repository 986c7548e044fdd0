//! Covariance-matrix-adaptation evolution strategy on a box.
//!
//! Search runs in coordinates normalized to the unit cube. Samples are
//! clipped to the cube before evaluation and the clipped points drive the
//! update. The objective is called exactly `budget` times, in a fixed order.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::rng;

use super::AppldError;

#[derive(Debug, Clone, PartialEq)]
pub struct CmaConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Initial step as a fraction of the box width.
    pub sigma0: f64,
    pub budget: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub evaluations: usize,
    /// Best objective value after each evaluation.
    pub best_trace: Vec<f64>,
}

pub fn population_size(n: usize) -> usize {
    4 + (3.0 * (n as f64).ln()).floor() as usize
}

impl CmaConfig {
    pub fn validate(&self) -> Result<(), AppldError> {
        let n = self.lower.len();
        if n == 0 || self.upper.len() != n {
            return Err(AppldError::Params("bounds must be non-empty and of equal length".into()));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(AppldError::Params(format!("bound {i} is invalid: [{lo}, {hi}]")));
            }
        }
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(AppldError::Params(format!("sigma0 must be positive, got {}", self.sigma0)));
        }
        if self.budget == 0 {
            return Err(AppldError::Params("budget must be at least 1".into()));
        }
        Ok(())
    }
}

struct Strategy {
    mean: DVector<f64>,
    sigma: f64,
    c: DMatrix<f64>,
    b: DMatrix<f64>,
    d: DVector<f64>,
    ps: DVector<f64>,
    pc: DVector<f64>,
    generation: usize,
}

impl Strategy {
    fn fresh(n: usize, sigma0: f64) -> Self {
        Self {
            mean: DVector::from_element(n, 0.5),
            sigma: sigma0,
            c: DMatrix::identity(n, n),
            b: DMatrix::identity(n, n),
            d: DVector::from_element(n, 1.0),
            ps: DVector::zeros(n),
            pc: DVector::zeros(n),
            generation: 0,
        }
    }
}

/// Minimize `f` over the box.
pub fn minimize(cfg: &CmaConfig, mut f: impl FnMut(&[f64]) -> f64) -> Result<CmaResult, AppldError> {
    cfg.validate()?;
    let n = cfg.lower.len();
    let nf = n as f64;
    let lambda = population_size(n);
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu).map(|i| ((mu as f64) + 0.5).ln() - ((i + 1) as f64).ln()).collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let ds = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let width: Vec<f64> = cfg.lower.iter().zip(&cfg.upper).map(|(l, u)| u - l).collect();
    let to_box = |y: &DVector<f64>| -> Vec<f64> { (0..n).map(|i| cfg.lower[i] + y[i] * width[i]).collect() };

    let mut rng = rng::seeded(cfg.seed);
    let mut st = Strategy::fresh(n, cfg.sigma0);
    let mut best_x = to_box(&st.mean);
    let mut best_f = f64::INFINITY;
    let mut trace = Vec::with_capacity(cfg.budget);

    while trace.len() < cfg.budget {
        st.generation += 1;
        let mut pop: Vec<(f64, DVector<f64>)> = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            if trace.len() == cfg.budget {
                break;
            }
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let y = (&st.mean + st.sigma * (&st.b * st.d.component_mul(&z))).map(|v: f64| v.clamp(0.0, 1.0));
            let x = to_box(&y);
            let fx = f(&x);
            let fx = if fx.is_nan() { f64::INFINITY } else { fx };
            if fx < best_f {
                best_f = fx;
                best_x = x;
            }
            trace.push(best_f);
            pop.push((fx, y));
        }
        if pop.len() < lambda {
            break;
        }
        // stable sort keeps sampling order among equal values
        pop.sort_by(|a, b| a.0.total_cmp(&b.0));

        let old = st.mean.clone();
        st.mean = pop.iter().take(mu).zip(&weights).fold(DVector::zeros(n), |acc, ((_, y), w)| acc + *w * y);
        let step = (&st.mean - &old) / st.sigma;

        let inv_sqrt_c = &st.b * DMatrix::from_diagonal(&st.d.map(|x| 1.0 / x)) * st.b.transpose();
        st.ps = (1.0 - cs) * &st.ps + (cs * (2.0 - cs) * mueff).sqrt() * (&inv_sqrt_c * &step);
        let ps_norm = st.ps.norm();
        let hsig =
            ps_norm / (1.0 - (1.0 - cs).powi(2 * st.generation as i32)).sqrt() / chi_n < 1.4 + 2.0 / (nf + 1.0);
        let hs = if hsig { 1.0 } else { 0.0 };
        st.pc = (1.0 - cc) * &st.pc + hs * (cc * (2.0 - cc) * mueff).sqrt() * &step;

        let mut rank_mu = DMatrix::zeros(n, n);
        for ((_, y), w) in pop.iter().take(mu).zip(&weights) {
            let dy = (y - &old) / st.sigma;
            rank_mu += *w * &dy * dy.transpose();
        }
        st.c = (1.0 - c1 - cmu) * &st.c
            + c1 * (&st.pc * st.pc.transpose() + (1.0 - hs) * cc * (2.0 - cc) * &st.c)
            + cmu * rank_mu;
        st.c = 0.5 * (&st.c + st.c.transpose());
        st.sigma *= ((cs / ds) * (ps_norm / chi_n - 1.0)).exp();
        st.sigma = st.sigma.clamp(1e-300, 1.0);

        let eig = SymmetricEigen::new(st.c.clone());
        st.b = eig.eigenvectors;
        st.d = eig.eigenvalues.map(|e| e.max(1e-300).sqrt());
    }

    Ok(CmaResult { best_x, best_f, evaluations: trace.len(), best_trace: trace })
}
