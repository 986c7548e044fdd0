//! Learning rule-based controller parameters from a demonstration:
//! segment it into contexts, fit one parameter vector per context by
//! black-box search, learn a context classifier, and switch parameters
//! online through a mode filter.

pub mod cmaes;
pub mod context;
pub mod segment;

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{rb_act, ControlError, Controller, FsmState, Mode, Observation, RbParams};
use crate::dataset::Demonstration;
use crate::rng;
use crate::vehicle::Action;

pub use cmaes::{population_size, CmaConfig, CmaResult};
pub use context::{features, mode_filter, predict_context, train_context_classifier, ContextModel, Features};
pub use segment::{segment_series, Changepoints};

#[derive(Debug, Error)]
pub enum AppldError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("data: {0}")]
    Data(String),
    #[error("context model: {0}")]
    Model(String),
    #[error("library has no parameters for context {0}")]
    UnknownContext(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Search box for the rule-based controller parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbBounds {
    pub lower: RbParams,
    pub upper: RbParams,
}

impl Default for RbBounds {
    fn default() -> Self {
        Self {
            lower: RbParams {
                v_nominal: 0.05,
                v_boost: 0.05,
                t_stuck: 0.5,
                t_ramp_fail: 0.5,
                t_backup: 0.5,
                v_backup: 0.05,
                steer_recover: 0.02,
                t_steer: 0.5,
                stuck_speed_eps: 0.005,
            },
            upper: RbParams {
                v_nominal: 1.0,
                v_boost: 1.0,
                t_stuck: 5.0,
                t_ramp_fail: 5.0,
                t_backup: 5.0,
                v_backup: 1.0,
                steer_recover: 0.35,
                t_steer: 5.0,
                stuck_speed_eps: 0.1,
            },
        }
    }
}

impl RbBounds {
    pub fn validate(&self) -> Result<(), AppldError> {
        for ((name, lo), hi) in RbParams::NAMES.iter().zip(self.lower.to_vec()).zip(self.upper.to_vec()) {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
                return Err(AppldError::Params(format!("bounds for {name} are invalid: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &RbParams) -> bool {
        self.lower.to_vec().iter().zip(self.upper.to_vec()).zip(p.to_vec()).all(|((lo, hi), v)| *lo <= v && v <= hi)
    }

    pub fn center(&self) -> RbParams {
        let (lo, hi) = (self.lower.to_vec(), self.upper.to_vec());
        RbParams::from_slice(&std::array::from_fn::<f64, { RbParams::DIM }, _>(|i| 0.5 * (lo[i] + hi[i])))
    }
}

/// Map a point of the box to controller parameters. An inverted
/// (v_nominal, v_boost) pair is swapped, so the objective has no flat region
/// where one of them is ignored.
pub fn repair(x: &[f64]) -> RbParams {
    let mut p = RbParams::from_slice(x);
    if p.v_boost < p.v_nominal {
        std::mem::swap(&mut p.v_boost, &mut p.v_nominal);
    }
    p
}

/// One demonstrated tick: what the controller saw and what the operator did.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayFrame {
    pub obs: Observation,
    pub a: [f64; 2],
}

impl ReplayFrame {
    pub fn from_demo(demo: &Demonstration) -> Vec<Self> {
        demo.frames
            .iter()
            .map(|f| Self { obs: Observation::blind(f.w, f.g, f.t), a: [f.v, f.omega] })
            .collect()
    }
}

/// H-weighted squared error, summed over the segment, between the
/// demonstrated actions and the rule-based controller replayed from a fresh
/// state machine at the first frame.
pub fn replay_loss(params: &RbParams, frames: &[ReplayFrame], h: [f64; 2]) -> f64 {
    let Some(first) = frames.first() else {
        return 0.0;
    };
    let mut fsm = FsmState::start(first.obs.t);
    let mut total = 0.0;
    for f in frames {
        let (act, next) = rb_act(&f.obs, &fsm, params);
        fsm = next;
        let (rv, rw) = (f.a[0] - act.v, f.a[1] - act.omega);
        total += h[0] * rv * rv + h[1] * rw * rw;
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFit {
    pub params: RbParams,
    pub loss: f64,
    pub evaluations: usize,
    pub best_trace: Vec<f64>,
}

pub const DEFAULT_BUDGET: usize = 2000;
pub const SIGMA0: f64 = 0.3;

/// Black-box fit of the rule-based controller to one segment.
pub fn fit_segment_params(
    frames: &[ReplayFrame],
    bounds: &RbBounds,
    budget: usize,
    seed: u64,
    h: [f64; 2],
) -> Result<SegmentFit, AppldError> {
    if frames.is_empty() {
        return Err(AppldError::Data("empty segment".into()));
    }
    bounds.validate()?;
    let cfg = CmaConfig {
        lower: bounds.lower.to_vec().to_vec(),
        upper: bounds.upper.to_vec().to_vec(),
        sigma0: SIGMA0,
        budget,
        seed,
    };
    let r = cmaes::minimize(&cfg, |x| replay_loss(&repair(x), frames, h))?;
    Ok(SegmentFit { params: repair(&r.best_x), loss: r.best_f, evaluations: r.evaluations, best_trace: r.best_trace })
}

/// Context id (1-based) to controller parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLibrary {
    pub context: Vec<LibraryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub id: usize,
    pub params: RbParams,
}

impl ParamLibrary {
    pub fn new(params: Vec<RbParams>) -> Self {
        Self { context: params.into_iter().enumerate().map(|(i, params)| LibraryEntry { id: i + 1, params }).collect() }
    }

    pub fn len(&self) -> usize {
        self.context.len()
    }

    pub fn is_empty(&self) -> bool {
        self.context.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&RbParams, AppldError> {
        self.context.iter().find(|e| e.id == id).map(|e| &e.params).ok_or(AppldError::UnknownContext(id))
    }

    pub fn validate(&self) -> Result<(), AppldError> {
        for (i, e) in self.context.iter().enumerate() {
            if e.id != i + 1 {
                return Err(AppldError::Model(format!("library ids must be 1..K in order, found {} at position {}", e.id, i + 1)));
            }
            e.params.validate().map_err(|err| AppldError::Params(err.to_string()))?;
        }
        if self.context.is_empty() {
            return Err(AppldError::Model("empty library".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("library serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, AppldError> {
        let lib: Self = toml::from_str(text).map_err(|e| AppldError::Model(e.to_string()))?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn save(&self, path: &Path) -> Result<(), AppldError> {
        Ok(std::fs::write(path, self.to_toml())?)
    }

    pub fn load(path: &Path) -> Result<Self, AppldError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Recent per-frame features for the mode filter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextWindow {
    pub recent: VecDeque<Features>,
}

impl ContextWindow {
    pub fn push(&mut self, x: Features, p: usize) {
        self.recent.push_back(x);
        while self.recent.len() > p.max(1) {
            self.recent.pop_front();
        }
    }
}

/// Select the context for `obs` and act with its parameters. The state
/// machine carries over unchanged across context switches.
pub fn appld_act(
    obs: &Observation,
    model: &ContextModel,
    library: &ParamLibrary,
    fsm: &FsmState,
    window: &mut ContextWindow,
) -> Result<(Action, FsmState, usize), AppldError> {
    window.push(features(obs), model.window);
    let recent: Vec<Features> = window.recent.iter().copied().collect();
    let c = predict_context(model, &recent)?;
    let params = library.get(c)?;
    let (act, next) = rb_act(obs, fsm, params);
    Ok((act, next, c))
}

/// The deployed pipeline as a controller.
#[derive(Debug, Clone)]
pub struct Appld {
    pub model: ContextModel,
    pub library: ParamLibrary,
    pub fsm: FsmState,
    pub window: ContextWindow,
    pub context: Option<usize>,
}

impl Appld {
    pub fn new(model: ContextModel, library: ParamLibrary) -> Result<Self, AppldError> {
        model.validate()?;
        library.validate()?;
        if library.len() < model.k() {
            return Err(AppldError::UnknownContext(library.len() + 1));
        }
        Ok(Self { model, library, fsm: FsmState::default(), window: ContextWindow::default(), context: None })
    }
}

impl Controller for Appld {
    fn id(&self) -> String {
        "APPLD".into()
    }

    fn needs_depth(&self) -> bool {
        true
    }

    fn reset(&mut self) {
        self.fsm = FsmState::default();
        self.window = ContextWindow::default();
        self.context = None;
    }

    fn act(&mut self, obs: &Observation) -> Result<Action, ControlError> {
        let (act, fsm, c) = appld_act(obs, &self.model, &self.library, &self.fsm, &mut self.window)
            .map_err(|e| ControlError::Policy(e.to_string()))?;
        self.fsm = fsm;
        self.context = Some(c);
        Ok(act)
    }

    fn mode(&self) -> Option<Mode> {
        Some(self.fsm.mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppldConfig {
    pub min_seg_len: usize,
    pub penalty: f64,
    pub budget: usize,
    pub seed: u64,
    pub h: [f64; 2],
    pub window: usize,
    pub bounds: RbBounds,
}

impl Default for AppldConfig {
    fn default() -> Self {
        Self {
            min_seg_len: segment::DEFAULT_MIN_SEG_LEN,
            penalty: segment::DEFAULT_PENALTY,
            budget: DEFAULT_BUDGET,
            seed: 0,
            h: [1.0, 1.0],
            window: context::DEFAULT_WINDOW,
            bounds: RbBounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppldFit {
    pub changepoints: Changepoints,
    pub library: ParamLibrary,
    pub model: ContextModel,
    pub segment_losses: Vec<f64>,
}

/// Fit one parameter vector per segment. Segment k uses seed
/// `derive(cfg.seed, k)`.
pub fn fit_library(
    frames: &[ReplayFrame],
    cp: &Changepoints,
    cfg: &AppldConfig,
) -> Result<(ParamLibrary, Vec<f64>), AppldError> {
    if cp.n != frames.len() {
        return Err(AppldError::Data(format!("changepoints cover {} frames, demonstration has {}", cp.n, frames.len())));
    }
    let mut params = Vec::with_capacity(cp.k());
    let mut losses = Vec::with_capacity(cp.k());
    for (k, (a, b)) in cp.bounds().into_iter().enumerate() {
        let fit = fit_segment_params(&frames[a..b], &cfg.bounds, cfg.budget, rng::derive(cfg.seed, k as u64 + 1), cfg.h)?;
        params.push(fit.params);
        losses.push(fit.loss);
    }
    Ok((ParamLibrary::new(params), losses))
}

/// The full offline pipeline on a recorded demonstration.
pub fn fit_demonstration(demo: &Demonstration, cfg: &AppldConfig) -> Result<AppldFit, AppldError> {
    let series: Vec<[f64; 2]> = demo.frames.iter().map(|f| [f.v, f.omega]).collect();
    let cp = segment_series(&series, cfg.min_seg_len, cfg.penalty)?;
    let frames = ReplayFrame::from_demo(demo);
    let (library, segment_losses) = fit_library(&frames, &cp, cfg)?;
    let xs: Vec<Features> = (0..demo.len()).map(|i| features(&demo.observation(i))).collect();
    let model = train_context_classifier(&xs, &cp.labels(), cfg.min_seg_len, cfg.window)?;
    Ok(AppldFit { changepoints: cp, library, model, segment_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::GroundSpeed;

    fn moving(t: f64, speed: f64) -> Observation {
        Observation::blind([speed; 4], GroundSpeed { dx: speed, ..GroundSpeed::default() }, t)
    }

    #[test]
    fn replay_of_own_output_is_zero() {
        let p = RbParams::default();
        let mut fsm = FsmState::start(0.05);
        let frames: Vec<ReplayFrame> = (1..=300)
            .map(|i| {
                let t = i as f64 * 0.05;
                let obs = moving(t, if (60..200).contains(&i) { 0.0 } else { 0.4 });
                let (a, next) = rb_act(&obs, &fsm, &p);
                fsm = next;
                ReplayFrame { obs, a: [a.v, a.omega] }
            })
            .collect();
        assert_eq!(replay_loss(&p, &frames, [1.0, 1.0]), 0.0);
        let other = RbParams { v_nominal: 0.4, ..p };
        assert!(replay_loss(&other, &frames, [1.0, 1.0]) > 0.0);
    }

    #[test]
    fn library_round_trip() {
        let lib = ParamLibrary::new(vec![RbParams::default(), RbParams { v_nominal: 0.2, ..RbParams::default() }]);
        assert_eq!(ParamLibrary::from_toml(&lib.to_toml()).unwrap(), lib);
        assert!(matches!(lib.get(3), Err(AppldError::UnknownContext(3))));
    }

    #[test]
    fn repair_orders_speeds() {
        let mut x = RbParams::default().to_vec();
        x[1] = 0.1;
        let p = repair(&x);
        assert_eq!((p.v_nominal, p.v_boost), (0.1, 0.5));
    }

    #[test]
    fn default_bounds_contain_defaults() {
        let b = RbBounds::default();
        b.validate().unwrap();
        assert!(b.contains(&RbParams::default()));
    }
}
