//! Synthetic demonstrations produced by the rule-based controller itself.

#![allow(dead_code)]

use rand::Rng as _;
use verti_core::appld::ReplayFrame;
use verti_core::bclearn::{Sample, SIDE};
use verti_core::controllers::{rb_act, FsmState, Observation, RbParams};
use verti_core::vehicle::GroundSpeed;

pub const DT: f64 = 0.05;

/// Ground-speed schedules, as (duration s, planar speed m/s). Each regime
/// cruises, stalls long enough for the stuck detector to start a ramp, and
/// recovers before the ramp gives up, under its own parameters.
pub const REGIME_A: [(f64, f64); 3] = [(1.0, 0.3), (3.5, 0.0), (1.5, 0.3)];
pub const REGIME_B: [(f64, f64); 3] = [(1.0, 0.3), (2.5, 0.0), (1.5, 0.3)];

/// Long stall that runs the whole recovery cycle.
pub const FULL_CYCLE: [(f64, f64); 3] = [(1.0, 0.3), (12.0, 0.0), (1.0, 0.3)];

pub fn alt_params() -> RbParams {
    RbParams {
        v_nominal: 0.3,
        v_boost: 0.6,
        t_stuck: 1.0,
        t_ramp_fail: 2.0,
        t_backup: 1.5,
        v_backup: 0.35,
        steer_recover: 0.2,
        t_steer: 1.5,
        stuck_speed_eps: 0.03,
    }
}

/// Observations following `schedule`, the first at tick `first_tick`.
pub fn obs_for(schedule: &[(f64, f64)], first_tick: usize) -> Vec<Observation> {
    let mut out = Vec::new();
    let mut tick = first_tick;
    for &(dur, speed) in schedule {
        for _ in 0..(dur / DT).round() as usize {
            let g = GroundSpeed { dx: speed, ..GroundSpeed::default() };
            out.push(Observation::blind([speed; 4], g, tick as f64 * DT));
            tick += 1;
        }
    }
    out
}

/// Label each observation with the controller's action, from a fresh state
/// machine at the first observation.
pub fn rb_label(params: &RbParams, obs: Vec<Observation>) -> Vec<ReplayFrame> {
    let mut fsm = FsmState::start(obs[0].t);
    obs.into_iter()
        .map(|o| {
            let (a, next) = rb_act(&o, &fsm, params);
            fsm = next;
            ReplayFrame { obs: o, a: [a.v, a.omega] }
        })
        .collect()
}

/// Regime A under `a` followed by regime B under `b`; returns the frames and
/// the index of the first frame of the second regime.
pub fn two_regime(a: &RbParams, b: &RbParams) -> (Vec<ReplayFrame>, usize) {
    let mut frames = rb_label(a, obs_for(&REGIME_A, 1));
    let boundary = frames.len();
    frames.extend(rb_label(b, obs_for(&REGIME_B, boundary + 1)));
    (frames, boundary)
}

/// Piecewise-constant (v, omega) series with optional Gaussian noise.
pub fn step_series(len_a: usize, a: [f64; 2], len_b: usize, b: [f64; 2], sigma: f64, seed: u64) -> Vec<[f64; 2]> {
    use rand_distr::{Distribution, Normal};
    let mut rng = verti_core::rng::seeded(seed);
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut out = Vec::with_capacity(len_a + len_b);
    for i in 0..len_a + len_b {
        let base = if i < len_a { a } else { b };
        out.push(if sigma > 0.0 {
            [base[0] + noise.sample(&mut rng), base[1] + noise.sample(&mut rng)]
        } else {
            base
        });
    }
    out
}

/// Random policy inputs in (0.05, 1) with random in-range actions.
pub fn random_batch(seed: u64, n: usize) -> Vec<Sample> {
    let mut r = verti_core::rng::seeded(seed);
    (0..n)
        .map(|_| Sample {
            x: (0..SIDE * SIDE).map(|_| r.random_range(0.05..1.0)).collect(),
            a: [r.random_range(-1.0..1.0), r.random_range(-0.35..0.35)],
        })
        .collect()
}

/// Images whose statistics vary smoothly: a base level plus a left/right
/// and a top/bottom tilt.
pub fn structured_images(seed: u64, n: usize) -> Vec<(Vec<f64>, f64, f64)> {
    let mut r = verti_core::rng::seeded(seed);
    (0..n)
        .map(|_| {
            let base = r.random_range(0.3..0.7);
            let lr = r.random_range(-0.2..0.2);
            let tb = r.random_range(-0.2..0.2);
            let x: Vec<f64> = (0..SIDE * SIDE)
                .map(|i| {
                    let (row, col) = ((i / SIDE) as f64 / 31.0 - 0.5, (i % SIDE) as f64 / 31.0 - 0.5);
                    base + lr * col + tb * row
                })
                .collect();
            let left = (0..SIDE * SIDE).filter(|i| i % SIDE < SIDE / 2).map(|i| x[i]).sum::<f64>() / 512.0;
            let top = x[..512].iter().sum::<f64>() / 512.0;
            (x, left, top)
        })
        .collect()
}
