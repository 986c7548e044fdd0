//! A running simulation: one vehicle on one map, advanced at a fixed tick.
//!
//! Tick order: step the vehicle with the held command, servo the camera,
//! update the trial status, then sense. A session spawned at t = 0 therefore
//! produces its first observation at t = dt.

use std::collections::VecDeque;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use crate::controllers::Observation;
use crate::rng::{self, Rng};
use crate::terrain::HeightMap;
use crate::vehicle::{
    self, Action, DepthImage, Goal, SimParams, Status, VehicleError, VehicleGeometry, VehicleState,
};

pub const DEFAULT_DEPTH_SIZE: usize = 64;

pub struct Session {
    pub map: Arc<HeightMap>,
    pub geom: VehicleGeometry,
    pub params: SimParams,
    pub goal: Option<Goal>,
    pub depth_size: usize,
    state: VehicleState,
    // trailing states covering the stuck window
    history: VecDeque<VehicleState>,
    noise: Option<(Rng, Normal<f64>)>,
}

impl Session {
    pub fn new(
        map: Arc<HeightMap>,
        geom: VehicleGeometry,
        params: SimParams,
        start: (f64, f64, f64),
        goal: Option<Goal>,
    ) -> Result<Self, VehicleError> {
        let state = VehicleState::spawn(&map, &geom, start.0, start.1, start.2, &params)?;
        let mut s = Self {
            map,
            geom,
            params,
            goal,
            depth_size: DEFAULT_DEPTH_SIZE,
            history: VecDeque::from([state.clone()]),
            state,
            noise: None,
        };
        s.reseed_noise();
        Ok(s)
    }

    fn reseed_noise(&mut self) {
        let std = self.params.sensor_noise_std;
        self.noise = (std > 0.0).then(|| {
            (rng::seeded(self.params.noise_seed), Normal::new(0.0, std).expect("finite positive std"))
        });
    }

    /// Respawn at `start` with the clock at zero.
    pub fn reset(&mut self, start: (f64, f64, f64)) -> Result<(), VehicleError> {
        let state = VehicleState::spawn(&self.map, &self.geom, start.0, start.1, start.2, &self.params)?;
        self.history = VecDeque::from([state.clone()]);
        self.state = state;
        self.reseed_noise();
        Ok(())
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    /// Advance one tick under `cmd`. Terminal sessions only advance the clock.
    pub fn advance(&mut self, cmd: &Action) -> Result<&VehicleState, VehicleError> {
        let dt = self.params.dt;
        if self.state.status.is_terminal() {
            self.state.t += dt;
            return Ok(&self.state);
        }
        let mut next = vehicle::step(&self.state, cmd, &self.map, &self.geom, &self.params, dt)?;
        let (tilt, pid) = vehicle::camera_tilt_control(&next, self.params.camera_target_pitch, dt, self.geom.max_tilt);
        next.camera_tilt = tilt;
        next.camera_pid = pid;

        self.history.push_back(next.clone());
        let window_start = next.t - self.params.stuck_window;
        while self.history.len() > 2 && self.history[1].t <= window_start + 1e-9 {
            self.history.pop_front();
        }
        if let Some(goal) = &self.goal {
            next.status = vehicle::trial_status(self.history.make_contiguous(), goal, &self.params);
            if let Some(last) = self.history.back_mut() {
                last.status = next.status;
            }
        }
        self.state = next;
        Ok(&self.state)
    }

    pub fn render(&self) -> DepthImage {
        vehicle::render_depth(&self.map, &self.state, &self.geom, self.depth_size, self.depth_size)
    }

    /// Sensor readings at the current state. Depth is rendered only on request.
    pub fn observe(&mut self, with_depth: bool) -> Observation {
        let mut obs = Observation {
            depth: with_depth.then(|| self.render()),
            w: self.state.wheel_rim_speed,
            g: self.state.ground_speed,
            t: self.state.t,
        };
        if let Some((rng, normal)) = self.noise.as_mut() {
            for w in &mut obs.w {
                *w += normal.sample(rng);
            }
            obs.g.dx += normal.sample(rng);
            obs.g.dy += normal.sample(rng);
            obs.g.z_clearance += normal.sample(rng);
            if let Some(d) = obs.depth.as_mut() {
                for px in &mut d.data {
                    *px = (*px + normal.sample(rng)).clamp(1e-6, DepthImage::MAX_RANGE);
                }
            }
        }
        obs
    }

    pub fn status(&self) -> Status {
        self.state.status
    }
}
