//! One timed run of a controller across a course.

use std::fmt;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use verti_core::controllers::Controller;
use verti_core::rng;
use verti_core::sim::Session;
use verti_core::terrain::{CourseSpec, Difficulty, HeightMap};
use verti_core::vehicle::{Action, Goal, SimParams, Status, VehicleError, VehicleKind};

use crate::HarnessError;

pub const TIMEOUT_S: f64 = 60.0;
/// Distance of the start pose and the finish line from the course ends.
pub const START_INSET: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Succeeded,
    Stuck,
    Tipped,
    Timeout,
    Boundary,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// From x = 0 toward +x.
    Forward,
    /// From the far staging zone toward -x.
    Reverse,
}

impl Direction {
    pub fn start_pose(self, length: f64) -> (f64, f64, f64) {
        match self {
            Self::Forward => (START_INSET, 0.0, 0.0),
            Self::Reverse => (length - START_INSET, 0.0, std::f64::consts::PI),
        }
    }

    pub fn goal(self, length: f64) -> Goal {
        match self {
            Self::Forward => Goal::forward(length, START_INSET),
            Self::Reverse => Goal::reverse(START_INSET),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub course: CourseSpec,
    pub vehicle: VehicleKind,
    pub direction: Direction,
    pub timeout: f64,
    pub depth_size: usize,
    /// Seeds the start-pose jitter.
    pub seed: u64,
    /// Half-widths of the uniform start jitter: lateral offset (m) and
    /// heading (rad). Zero places the vehicle exactly on the start pose.
    pub jitter: (f64, f64),
    pub sim: SimParams,
}

impl TrialSpec {
    pub fn new(course: CourseSpec, vehicle: VehicleKind, direction: Direction, seed: u64) -> Self {
        Self {
            course,
            vehicle,
            direction,
            timeout: TIMEOUT_S,
            depth_size: verti_core::sim::DEFAULT_DEPTH_SIZE,
            seed,
            jitter: (0.0, 0.0),
            sim: SimParams::default(),
        }
    }

    pub fn start_pose(&self) -> (f64, f64, f64) {
        let (x, y, yaw) = self.direction.start_pose(self.course.length());
        let (dy, dyaw) = self.jitter;
        if dy == 0.0 && dyaw == 0.0 {
            return (x, y, yaw);
        }
        let mut r = rng::seeded(self.seed);
        let oy = if dy > 0.0 { r.random_range(-dy..=dy) } else { 0.0 };
        let oyaw = if dyaw > 0.0 { r.random_range(-dyaw..=dyaw) } else { 0.0 };
        (x, y + oy, yaw + oyaw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub outcome: Outcome,
    /// Present iff the trial succeeded.
    pub traversal_time: Option<f64>,
    pub seed: u64,
    pub controller: String,
    pub difficulty: Difficulty,
    pub vehicle: VehicleKind,
    pub direction: Direction,
    /// Simulated time when the trial ended.
    pub elapsed: f64,
    pub final_x: f64,
}

/// Run `ctl` until the vehicle reaches a terminal status or the timeout.
///
/// Each tick observes, asks the controller for an action and steps the
/// vehicle with it. The first observation is the spawn state at t = 0.
pub fn run_trial(ctl: &mut dyn Controller, map: Arc<HeightMap>, spec: &TrialSpec) -> Result<TrialResult, HarnessError> {
    let length = spec.course.length();
    let geom = spec.vehicle.geometry();
    let goal = spec.direction.goal(length);
    let mut sim = Session::new(map, geom, spec.sim, spec.start_pose(), Some(goal))?;
    sim.depth_size = spec.depth_size;
    ctl.reset();
    let needs_depth = ctl.needs_depth();

    let outcome = loop {
        match sim.status() {
            Status::Succeeded => break Outcome::Succeeded,
            Status::Stuck => break Outcome::Stuck,
            Status::Tipped => break Outcome::Tipped,
            Status::Running => {}
        }
        if sim.state().t >= spec.timeout - 1e-9 {
            break Outcome::Timeout;
        }
        let obs = sim.observe(needs_depth);
        let action: Action = ctl.act(&obs)?;
        match sim.advance(&action) {
            Ok(_) => {}
            Err(VehicleError::Boundary { .. }) => break Outcome::Boundary,
            Err(e) => return Err(e.into()),
        }
    };
    let state = sim.state();
    Ok(TrialResult {
        outcome,
        traversal_time: (outcome == Outcome::Succeeded).then_some(state.t),
        seed: spec.seed,
        controller: ctl.id(),
        difficulty: spec.course.difficulty,
        vehicle: spec.vehicle,
        direction: spec.direction,
        elapsed: state.t,
        final_x: state.pose.x,
    })
}
