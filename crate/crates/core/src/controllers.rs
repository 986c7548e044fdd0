//! Open-loop and rule-based controllers behind a common [`Controller`] trait.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::{Action, DepthImage, GroundSpeed};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("observation has no depth image")]
    MissingDepth,
    #[error("invalid controller parameters: {0}")]
    Params(String),
    #[error("{0}")]
    Policy(String),
}

/// What a controller sees each tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub depth: Option<DepthImage>,
    pub w: [f64; 4],
    pub g: GroundSpeed,
    pub t: f64,
}

impl Observation {
    pub fn blind(w: [f64; 4], g: GroundSpeed, t: f64) -> Self {
        Self { depth: None, w, g, t }
    }
}

pub trait Controller: Send {
    fn id(&self) -> String;

    /// Whether [`act`](Self::act) reads the depth image.
    fn needs_depth(&self) -> bool {
        false
    }

    fn reset(&mut self);

    fn act(&mut self, obs: &Observation) -> Result<Action, ControlError>;

    /// Current recovery mode, for controllers that have one.
    fn mode(&self) -> Option<Mode> {
        None
    }
}

pub const OL_SPEED: f64 = 0.5;

/// Constant forward drive with both differentials locked in low gear.
pub fn ol_act(_t: f64) -> Action {
    Action::locked_low(OL_SPEED, 0.0)
}

#[derive(Debug, Clone, Default)]
pub struct OpenLoop;

impl Controller for OpenLoop {
    fn id(&self) -> String {
        "OL".into()
    }

    fn reset(&mut self) {}

    fn act(&mut self, obs: &Observation) -> Result<Action, ControlError> {
        Ok(ol_act(obs.t))
    }
}

/// Parameter vector of the rule-based controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbParams {
    pub v_nominal: f64,
    pub v_boost: f64,
    pub t_stuck: f64,
    pub t_ramp_fail: f64,
    pub t_backup: f64,
    pub v_backup: f64,
    pub steer_recover: f64,
    pub t_steer: f64,
    pub stuck_speed_eps: f64,
}

impl Default for RbParams {
    fn default() -> Self {
        Self {
            v_nominal: 0.5,
            v_boost: 0.75,
            t_stuck: 2.0,
            t_ramp_fail: 3.0,
            t_backup: 2.0,
            v_backup: 0.5,
            steer_recover: 0.314,
            t_steer: 2.0,
            stuck_speed_eps: 0.02,
        }
    }
}

impl RbParams {
    pub const DIM: usize = 9;
    pub const NAMES: [&'static str; Self::DIM] = [
        "v_nominal",
        "v_boost",
        "t_stuck",
        "t_ramp_fail",
        "t_backup",
        "v_backup",
        "steer_recover",
        "t_steer",
        "stuck_speed_eps",
    ];

    pub fn to_vec(&self) -> [f64; Self::DIM] {
        [
            self.v_nominal,
            self.v_boost,
            self.t_stuck,
            self.t_ramp_fail,
            self.t_backup,
            self.v_backup,
            self.steer_recover,
            self.t_steer,
            self.stuck_speed_eps,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), Self::DIM, "parameter vector length");
        Self {
            v_nominal: v[0],
            v_boost: v[1],
            t_stuck: v[2],
            t_ramp_fail: v[3],
            t_backup: v[4],
            v_backup: v[5],
            steer_recover: v[6],
            t_steer: v[7],
            stuck_speed_eps: v[8],
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if let Some((name, val)) = Self::NAMES
            .iter()
            .zip(self.to_vec())
            .find(|(_, v)| !(v.is_finite() && *v > 0.0))
        {
            return Err(ControlError::Params(format!("{name} must be positive, got {val}")));
        }
        if self.v_boost < self.v_nominal {
            return Err(ControlError::Params(format!(
                "v_boost {} is below v_nominal {}",
                self.v_boost, self.v_nominal
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("params serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self, ControlError> {
        let p: Self = toml::from_str(text).map_err(|e| ControlError::Params(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, ControlError> {
        let text = std::fs::read_to_string(path).map_err(|e| ControlError::Params(e.to_string()))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Forward,
    Ramp,
    Backup,
    SteerLeft,
    SteerRight,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Forward => "Forward",
            Self::Ramp => "Ramp",
            Self::Backup => "Backup",
            Self::SteerLeft => "SteerLeft",
            Self::SteerRight => "SteerRight",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsmState {
    pub mode: Mode,
    pub mode_entry_time: f64,
    pub stuck_since: Option<f64>,
}

impl FsmState {
    pub fn start(t: f64) -> Self {
        Self { mode: Mode::Forward, mode_entry_time: t, stuck_since: None }
    }

    fn enter(&mut self, mode: Mode, t: f64) {
        self.mode = mode;
        self.mode_entry_time = t;
    }
}

impl Default for FsmState {
    fn default() -> Self {
        Self::start(0.0)
    }
}

// slack for comparing accumulated tick times against durations
const TIME_EPS: f64 = 1e-9;

/// One tick of the recovery state machine.
///
/// Order within a tick: update the stuck detector from the ground-speed
/// reading, take at most one transition, emit the action of the resulting
/// mode. Differentials are always locked and low gear is always engaged.
pub fn rb_act(obs: &Observation, fsm: &FsmState, params: &RbParams) -> (Action, FsmState) {
    let t = obs.t;
    let slow = obs.g.planar() < params.stuck_speed_eps;
    let mut next = *fsm;
    next.stuck_since = match (slow, fsm.stuck_since) {
        (false, _) => None,
        (true, Some(since)) => Some(since),
        (true, None) => Some(t),
    };
    let elapsed = t - fsm.mode_entry_time;
    let done = |dur: f64| elapsed >= dur - TIME_EPS;

    match fsm.mode {
        Mode::Forward => {
            if next.stuck_since.is_some_and(|s| t - s >= params.t_stuck - TIME_EPS) {
                next.enter(Mode::Ramp, t);
            }
        }
        Mode::Ramp => {
            if !slow {
                next.enter(Mode::Forward, t);
            } else if done(params.t_ramp_fail) {
                next.enter(Mode::Backup, t);
            }
        }
        Mode::Backup => {
            if done(params.t_backup) {
                next.enter(Mode::SteerLeft, t);
            }
        }
        Mode::SteerLeft => {
            if done(params.t_steer) {
                next.enter(Mode::SteerRight, t);
            }
        }
        Mode::SteerRight => {
            if done(params.t_steer) {
                next.enter(Mode::Forward, t);
                next.stuck_since = slow.then_some(t);
            }
        }
    }

    let (v, omega) = match next.mode {
        Mode::Forward => (params.v_nominal, 0.0),
        Mode::Ramp => {
            let frac = (t - next.mode_entry_time) / params.t_ramp_fail;
            (params.v_nominal + (params.v_boost - params.v_nominal) * frac, 0.0)
        }
        Mode::Backup => (-params.v_backup, 0.0),
        Mode::SteerLeft => (params.v_boost, params.steer_recover),
        Mode::SteerRight => (params.v_boost, -params.steer_recover),
    };
    (Action::locked_low(v, omega).clamped(), next)
}

/// Rule-based controller.
///
/// With `conditional_locking` enabled, each differential is locked only
/// while the wheels it governs slip; otherwise both stay locked.
#[derive(Debug, Clone)]
pub struct RuleBased {
    pub params: RbParams,
    pub fsm: FsmState,
    pub conditional_locking: bool,
}

/// Relative slip above which a differential is locked in conditional mode.
pub const SLIP_LOCK_RATIO: f64 = 0.2;

impl RuleBased {
    pub fn new(params: RbParams) -> Self {
        Self { params, fsm: FsmState::default(), conditional_locking: false }
    }
}

fn slipping(rims: &[f64], ground: f64) -> bool {
    rims.iter().any(|w| w.abs() > 1e-6 && (w.abs() - ground) > SLIP_LOCK_RATIO * w.abs())
}

impl Controller for RuleBased {
    fn id(&self) -> String {
        "RB".into()
    }

    fn reset(&mut self) {
        self.fsm = FsmState::default();
    }

    fn act(&mut self, obs: &Observation) -> Result<Action, ControlError> {
        let (mut action, fsm) = rb_act(obs, &self.fsm, &self.params);
        self.fsm = fsm;
        if self.conditional_locking {
            let ground = obs.g.planar();
            action.d = (slipping(&obs.w[..2], ground), slipping(&obs.w[2..], ground));
        }
        Ok(action)
    }

    fn mode(&self) -> Option<Mode> {
        Some(self.fsm.mode)
    }
}
