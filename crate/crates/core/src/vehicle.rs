//! Quasi-static wheeled-vehicle model over a heightmap.
//!
//! The body frame has its origin on the wheel-contact plane midway between
//! the front and the last axle, x forward, y to the left, z up. Wheels are
//! indexed axle-major, left before right. Positive pitch is nose up and
//! positive roll raises the left side.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::terrain::{HeightMap, TerrainError};

#[derive(Debug, Error)]
pub enum VehicleError {
    #[error("wheel footprint at ({x:.3}, {y:.3}) leaves the map")]
    Boundary { x: f64, y: f64 },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("geometry config: {0}")]
    Config(String),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleKind {
    V6W,
    V4W,
}

impl VehicleKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::V6W => "V6W",
            Self::V4W => "V4W",
        }
    }

    pub fn geometry(self) -> VehicleGeometry {
        match self {
            Self::V6W => VehicleGeometry::v6w(),
            Self::V4W => VehicleGeometry::v4w(),
        }
    }

    pub fn other(self) -> Self {
        match self {
            Self::V6W => Self::V4W,
            Self::V4W => Self::V6W,
        }
    }
}

impl std::str::FromStr for VehicleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "V6W" => Ok(Self::V6W),
            "V4W" => Ok(Self::V4W),
            other => Err(format!("unknown vehicle {other:?}")),
        }
    }
}

impl std::fmt::Display for VehicleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    pub name: VehicleKind,
    /// Axle positions measured from the front axle, strictly decreasing.
    pub axle_x_offsets: Vec<f64>,
    pub track_width: f64,
    pub body_length: f64,
    pub body_width: f64,
    pub body_height: f64,
    pub wheel_radius: f64,
    /// Camera position in the body frame.
    pub camera_mount: (f64, f64, f64),
    pub max_tilt: f64,
}

impl VehicleGeometry {
    pub fn v6w() -> Self {
        let offsets = vec![0.0, -0.471, -0.603];
        let front = 0.603 / 2.0;
        Self {
            name: VehicleKind::V6W,
            axle_x_offsets: offsets,
            track_width: 0.20,
            body_length: 0.863,
            body_width: 0.249,
            body_height: 0.200,
            wheel_radius: 0.06,
            camera_mount: (front + 0.05, 0.0, 0.25),
            max_tilt: 1.05,
        }
    }

    pub fn v4w() -> Self {
        let front = 0.312 / 2.0;
        Self {
            name: VehicleKind::V4W,
            axle_x_offsets: vec![0.0, -0.312],
            track_width: 0.20,
            body_length: 0.523,
            body_width: 0.249,
            body_height: 0.200,
            wheel_radius: 0.06,
            camera_mount: (front + 0.05, 0.0, 0.25),
            max_tilt: 1.05,
        }
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        if self.axle_x_offsets.len() < 2 {
            return Err(VehicleError::Geometry("need at least two axles".into()));
        }
        if self.axle_x_offsets.windows(2).any(|w| w[1] >= w[0]) {
            return Err(VehicleError::Geometry("axle offsets must be strictly decreasing".into()));
        }
        let dims = [
            self.track_width,
            self.body_length,
            self.body_width,
            self.body_height,
            self.wheel_radius,
            self.max_tilt,
        ];
        if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(VehicleError::Geometry("dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, VehicleError> {
        let g: Self = toml::from_str(text).map_err(|e| VehicleError::Config(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("geometry serializes")
    }

    pub fn load(path: &Path) -> Result<Self, VehicleError> {
        let text = std::fs::read_to_string(path).map_err(|e| VehicleError::Config(e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn axle_count(&self) -> usize {
        self.axle_x_offsets.len()
    }

    pub fn wheel_count(&self) -> usize {
        2 * self.axle_count()
    }

    /// |last axle offset|, the steering wheelbase.
    pub fn wheelbase(&self) -> f64 {
        self.axle_x_offsets.last().copied().unwrap_or(0.0).abs()
    }

    /// Body-frame (x, y) of every wheel contact point.
    pub fn wheel_positions(&self) -> Vec<(f64, f64)> {
        let mid = self.wheelbase() / 2.0;
        let half = self.track_width / 2.0;
        self.axle_x_offsets
            .iter()
            .flat_map(|off| [(off + mid, half), (off + mid, -half)])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub v: f64,
    pub omega: f64,
    /// (front lock, rear lock); `true` is locked.
    pub d: (bool, bool),
    /// `true` selects low gear.
    pub s: bool,
}

impl Action {
    pub const V_MAX: f64 = 1.0;
    pub const OMEGA_MAX: f64 = 0.35;

    pub fn locked_low(v: f64, omega: f64) -> Self {
        Self { v, omega, d: (true, true), s: true }
    }

    pub fn stop() -> Self {
        Self::locked_low(0.0, 0.0)
    }

    pub fn clamped(self) -> Self {
        Self {
            v: clamp_finite(self.v, Self::V_MAX),
            omega: clamp_finite(self.omega, Self::OMEGA_MAX),
            ..self
        }
    }

    pub fn within_bounds(&self) -> bool {
        self.v.abs() <= Self::V_MAX && self.omega.abs() <= Self::OMEGA_MAX
    }
}

fn clamp_finite(x: f64, bound: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-bound, bound)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// Optical-flow style ground-speed reading in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundSpeed {
    pub dx: f64,
    pub dy: f64,
    pub z_clearance: f64,
    pub flag_speed: bool,
    pub flag_z: bool,
}

impl GroundSpeed {
    pub fn planar(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

impl Default for GroundSpeed {
    fn default() -> Self {
        Self { dx: 0.0, dy: 0.0, z_clearance: 0.0, flag_speed: true, flag_z: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Running,
    Stuck,
    Tipped,
    Succeeded,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Self::Running
    }
}

/// PID memory for the camera tilt loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TiltPid {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub pose: Pose,
    pub wheel_contact: Vec<bool>,
    /// Sensed rim speeds of the front two axles (four wheels).
    pub wheel_rim_speed: [f64; 4],
    pub ground_speed: GroundSpeed,
    pub camera_tilt: f64,
    pub camera_pid: TiltPid,
    pub t: f64,
    pub status: Status,
}

/// Tunable constants of the simulation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub dt: f64,
    pub contact_tolerance: f64,
    pub climb_limit_low: f64,
    pub climb_limit_high: f64,
    pub tip_threshold: f64,
    pub stuck_window: f64,
    pub stuck_speed: f64,
    pub goal_margin: f64,
    pub camera_target_pitch: f64,
    /// Standard deviation of additive Gaussian sensor noise; 0 disables it.
    pub sensor_noise_std: f64,
    pub noise_seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 0.05,
            contact_tolerance: 0.005,
            climb_limit_low: 0.61,
            climb_limit_high: 0.35,
            tip_threshold: 0.785,
            stuck_window: 10.0,
            stuck_speed: 0.02,
            goal_margin: 0.2,
            camera_target_pitch: -0.45,
            sensor_noise_std: 0.0,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChassisFit {
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub wheel_contact: Vec<bool>,
    /// Terrain support height under each wheel.
    pub support: Vec<f64>,
    /// Lifted plane height at each wheel.
    pub plane: Vec<f64>,
}

/// World (x, y) of a body-frame point at the given planar pose.
pub fn body_to_world(x: f64, y: f64, yaw: f64, bx: f64, by: f64) -> (f64, f64) {
    let (s, c) = yaw.sin_cos();
    (x + c * bx - s * by, y + s * bx + c * by)
}

/// Support height under one wheel: max over the footprint center and four
/// compass points at half the wheel radius.
pub fn wheel_support(map: &HeightMap, wx: f64, wy: f64, wheel_radius: f64) -> Result<f64, VehicleError> {
    let r = 0.5 * wheel_radius;
    let mut best = f64::NEG_INFINITY;
    for (px, py) in [(wx, wy), (wx + r, wy), (wx - r, wy), (wx, wy + r), (wx, wy - r)] {
        let h = map.height_at(px, py).map_err(|_| VehicleError::Boundary { x: px, y: py })?;
        best = best.max(h);
    }
    Ok(best)
}

/// Rest the chassis on the terrain: least-squares plane through the wheel
/// support heights, raised until no wheel is below it.
pub fn fit_chassis(
    map: &HeightMap,
    x: f64,
    y: f64,
    yaw: f64,
    geom: &VehicleGeometry,
    contact_tolerance: f64,
) -> Result<ChassisFit, VehicleError> {
    let wheels = geom.wheel_positions();
    let support = wheels
        .iter()
        .map(|(bx, by)| {
            let (wx, wy) = body_to_world(x, y, yaw, *bx, *by);
            wheel_support(map, wx, wy, geom.wheel_radius)
        })
        .collect::<Result<Vec<_>, _>>()?;

    // normal equations for h = a + b*x + c*y in the body frame
    let mut m = nalgebra::Matrix3::<f64>::zeros();
    let mut rhs = nalgebra::Vector3::<f64>::zeros();
    for ((bx, by), h) in wheels.iter().zip(&support) {
        let row = nalgebra::Vector3::new(1.0, *bx, *by);
        m += row * row.transpose();
        rhs += row * *h;
    }
    let coef = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| VehicleError::Geometry("degenerate wheel layout".into()))?;
    let (mut a, b, c) = (coef[0], coef[1], coef[2]);

    let plane_at = |a: f64, (bx, by): (f64, f64)| a + b * bx + c * by;
    let lift = wheels
        .iter()
        .zip(&support)
        .map(|(w, h)| h - plane_at(a, *w))
        .fold(f64::NEG_INFINITY, f64::max);
    a += lift;
    // absorb rounding so every wheel sits at or above its support
    for (w, h) in wheels.iter().zip(&support) {
        let gap = h - plane_at(a, *w);
        if gap > 0.0 {
            a += gap;
        }
    }
    let plane: Vec<f64> = wheels.iter().map(|w| plane_at(a, *w)).collect();
    let wheel_contact = plane
        .iter()
        .zip(&support)
        .map(|(p, h)| p - h <= contact_tolerance)
        .collect();
    Ok(ChassisFit { z: a, roll: c.atan(), pitch: b.atan(), wheel_contact, support, plane })
}

/// Fraction of commanded speed the drivetrain can deliver.
///
/// An axle drives when both its wheels touch, or when its governing lock is
/// engaged and at least one wheel touches. The front lock governs axle 0 and
/// the rear lock every axle behind it. `pitch` is measured along the
/// direction of travel (positive = climbing).
pub fn traction(contacts: &[bool], d: (bool, bool), low_gear: bool, pitch: f64, params: &SimParams) -> f64 {
    let axles = contacts.len() / 2;
    if axles == 0 {
        return 0.0;
    }
    let driving = contacts
        .chunks_exact(2)
        .enumerate()
        .filter(|(i, pair)| {
            let locked = if *i == 0 { d.0 } else { d.1 };
            (pair[0] && pair[1]) || (locked && (pair[0] || pair[1]))
        })
        .count();
    let base = driving as f64 / axles as f64;
    let limit = if low_gear { params.climb_limit_low } else { params.climb_limit_high };
    if pitch > limit {
        0.0
    } else {
        base * (1.0 - pitch.max(0.0) / limit)
    }
}

impl VehicleState {
    /// Place the vehicle at rest on the terrain.
    pub fn spawn(
        map: &HeightMap,
        geom: &VehicleGeometry,
        x: f64,
        y: f64,
        yaw: f64,
        params: &SimParams,
    ) -> Result<Self, VehicleError> {
        let fit = fit_chassis(map, x, y, yaw, geom, params.contact_tolerance)?;
        let clearance = fit.z - map.height_at(x, y)?;
        let mut state = Self {
            pose: Pose { x, y, z: fit.z, roll: fit.roll, pitch: fit.pitch, yaw },
            wheel_contact: fit.wheel_contact,
            wheel_rim_speed: [0.0; 4],
            ground_speed: GroundSpeed { z_clearance: clearance, ..GroundSpeed::default() },
            camera_tilt: 0.0,
            camera_pid: TiltPid::default(),
            t: 0.0,
            status: Status::Running,
        };
        // start with the camera already at its target world pitch
        state.camera_tilt = (params.camera_target_pitch - fit.pitch).clamp(-geom.max_tilt, geom.max_tilt);
        if fit.roll.abs() > params.tip_threshold || fit.pitch.abs() > params.tip_threshold {
            state.status = Status::Tipped;
        }
        Ok(state)
    }

    pub fn traction(&self, action: &Action, params: &SimParams) -> f64 {
        let along = if action.v < 0.0 { -self.pose.pitch } else { self.pose.pitch };
        traction(&self.wheel_contact, action.d, action.s, along, params)
    }
}

/// Advance the vehicle one tick. Pure: identical inputs give bit-identical
/// outputs.
pub fn step(
    state: &VehicleState,
    action: &Action,
    map: &HeightMap,
    geom: &VehicleGeometry,
    params: &SimParams,
    dt: f64,
) -> Result<VehicleState, VehicleError> {
    let cmd = action.clamped();
    let factor = state.traction(&cmd, params);
    let v_eff = cmd.v * factor;
    let p = state.pose;

    let yaw = p.yaw + (v_eff / geom.wheelbase()) * cmd.omega.tan() * dt;
    let x = p.x + v_eff * yaw.cos() * p.pitch.cos() * dt;
    let y = p.y + v_eff * yaw.sin() * p.pitch.cos() * dt;
    let fit = fit_chassis(map, x, y, yaw, geom, params.contact_tolerance)?;

    let (vx, vy) = ((x - p.x) / dt, (y - p.y) / dt);
    let (s, c) = yaw.sin_cos();
    let ground_speed = GroundSpeed {
        dx: c * vx + s * vy,
        dy: -s * vx + c * vy,
        z_clearance: fit.z - map.height_at(x, y)?,
        flag_speed: true,
        flag_z: true,
    };
    let tipped = fit.roll.abs() > params.tip_threshold || fit.pitch.abs() > params.tip_threshold;
    Ok(VehicleState {
        pose: Pose { x, y, z: fit.z, roll: fit.roll, pitch: fit.pitch, yaw },
        wheel_contact: fit.wheel_contact,
        wheel_rim_speed: [cmd.v; 4],
        ground_speed,
        camera_tilt: state.camera_tilt,
        camera_pid: state.camera_pid,
        t: state.t + dt,
        status: if tipped { Status::Tipped } else { state.status },
    })
}

pub const TILT_KP: f64 = 4.0;
pub const TILT_KI: f64 = 0.0;
pub const TILT_KD: f64 = 0.2;
pub const TILT_SLEW: f64 = 1.0;

/// One PID step of the camera tilt servo toward a world-frame pitch.
/// Returns the new tilt and the updated controller memory.
pub fn camera_tilt_control(state: &VehicleState, target_world_pitch: f64, dt: f64, max_tilt: f64) -> (f64, TiltPid) {
    let error = target_world_pitch - (state.pose.pitch + state.camera_tilt);
    let pid = state.camera_pid;
    let integral = pid.integral + error * dt;
    let derivative = pid.prev_error.map_or(0.0, |prev| (error - prev) / dt);
    let rate = (TILT_KP * error + TILT_KI * integral + TILT_KD * derivative).clamp(-TILT_SLEW, TILT_SLEW);
    let tilt = (state.camera_tilt + rate * dt).clamp(-max_tilt, max_tilt);
    (tilt, TiltPid { integral, prev_error: Some(error) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub fov: f64,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub const MAX_RANGE: f64 = 5.0;

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, fov: CAMERA_FOV, data: vec![value; width * height] }
    }

    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

pub const CAMERA_FOV: f64 = 1.571;
const MIN_DEPTH: f64 = 1e-6;

/// World position and rotation (columns = camera forward, left, up) of the
/// depth camera.
pub fn camera_pose(state: &VehicleState, geom: &VehicleGeometry) -> ([f64; 3], [[f64; 3]; 3]) {
    let p = state.pose;
    let body = rotation(p.yaw, p.pitch, p.roll);
    let (mx, my, mz) = geom.camera_mount;
    let m = mat_vec(&body, [mx, my, mz]);
    let origin = [p.x + m[0], p.y + m[1], p.z + m[2]];
    let cam = mat_mul(&body, &rotation(0.0, state.camera_tilt, 0.0));
    (origin, cam)
}

/// Rotation yaw about z, then nose-up pitch, then roll about x (left side up).
pub fn rotation(yaw: f64, pitch: f64, roll: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let rz = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cp, 0.0, -sp], [0.0, 1.0, 0.0], [sp, 0.0, cp]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]];
    mat_mul(&mat_mul(&rz, &ry), &rx)
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Unit world-frame ray through pixel (col, row) for a pinhole camera with
/// horizontal field of view `fov`.
pub fn pixel_ray(rot: &[[f64; 3]; 3], width: usize, height: usize, fov: f64, col: usize, row: usize) -> [f64; 3] {
    let f = (width as f64 / 2.0) / (fov / 2.0).tan();
    let left = -((col as f64 + 0.5) - width as f64 / 2.0) / f;
    let up = -((row as f64 + 0.5) - height as f64 / 2.0) / f;
    let d = mat_vec(rot, [1.0, left, up]);
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    [d[0] / n, d[1] / n, d[2] / n]
}

/// Render the depth camera. Each ray walks the grid cell by cell and solves
/// for its first intersection with the bilinear surface patch in that cell
/// (ground outside the map is the plane z = 0). Misses read
/// [`DepthImage::MAX_RANGE`].
pub fn render_depth(
    map: &HeightMap,
    state: &VehicleState,
    geom: &VehicleGeometry,
    width: usize,
    height: usize,
) -> DepthImage {
    let (origin, rot) = camera_pose(state, geom);
    let blocks = BlockMax::new(map);
    let mut data = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let dir = pixel_ray(&rot, width, height, CAMERA_FOV, col, row);
            data.push(cast_ray(map, &blocks, origin, dir, DepthImage::MAX_RANGE));
        }
    }
    DepthImage { width, height, fov: CAMERA_FOV, data }
}

/// Cells per side of a [`BlockMax`] block.
const BLOCK: usize = 8;

/// Highest node of every `BLOCK` x `BLOCK` group of cells, so a ray can pass
/// over a whole block in one step.
pub struct BlockMax {
    nx: usize,
    ny: usize,
    max: Vec<f64>,
    global: f64,
}

impl BlockMax {
    pub fn new(map: &HeightMap) -> Self {
        let cells = (map.length_cells - 1, map.width_cells - 1);
        let nx = cells.0.div_ceil(BLOCK);
        let ny = cells.1.div_ceil(BLOCK);
        let mut max = vec![0.0f64; nx * ny];
        for iy in 0..map.width_cells {
            // a node on a block edge belongs to the blocks on both sides
            let by = [iy.saturating_sub(1) / BLOCK, iy.min(cells.1 - 1) / BLOCK];
            for ix in 0..map.length_cells {
                let bx = [ix.saturating_sub(1) / BLOCK, ix.min(cells.0 - 1) / BLOCK];
                let h = map.node(ix, iy);
                for y in by {
                    for x in bx {
                        let m = &mut max[y * nx + x];
                        *m = m.max(h);
                    }
                }
            }
        }
        Self { nx, ny, max, global: map.max_height() }
    }

    fn at(&self, cx: usize, cy: usize) -> f64 {
        self.max[(cy / BLOCK).min(self.ny - 1) * self.nx + (cx / BLOCK).min(self.nx - 1)]
    }
}

/// Distance to the first point along the ray at or below the terrain,
/// capped at `range`.
pub fn cast_ray(map: &HeightMap, blocks: &BlockMax, o: [f64; 3], d: [f64; 3], range: f64) -> f64 {
    let max_h = blocks.global;
    let res = map.resolution;
    let (x0, y0) = map.origin;
    let gx0 = (o[0] - x0) / res;
    let gy0 = (o[1] - y0) / res;

    // parametric distance to grid line k along one axis
    let crossing = |g0: f64, dk: f64, k: f64| (k - g0) * res / dk;
    let first_line = |g0: f64, dk: f64| -> (f64, f64) {
        if dk > 0.0 {
            (g0.floor() + 1.0, 1.0)
        } else if dk < 0.0 {
            (g0.ceil() - 1.0, -1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    };
    let (mut kx, sx) = first_line(gx0, d[0]);
    let (mut ky, sy) = first_line(gy0, d[1]);
    let mut tx = if sx == 0.0 { f64::INFINITY } else { crossing(gx0, d[0], kx) };
    let mut ty = if sy == 0.0 { f64::INFINITY } else { crossing(gy0, d[1], ky) };

    let mut ta = 0.0;
    while ta < range {
        let z_a = o[2] + ta * d[2];
        if d[2] >= 0.0 && z_a > max_h {
            break;
        }
        let tb = tx.min(ty).min(range);
        if tb > ta {
            if let Some(skip) = block_exit(map, blocks, o, d, ta, tb, range) {
                ta = skip;
                while tx <= ta {
                    kx += sx;
                    tx = crossing(gx0, d[0], kx);
                }
                while ty <= ta {
                    ky += sy;
                    ty = crossing(gy0, d[1], ky);
                }
                continue;
            }
            if let Some(hit) = intersect_span(map, o, d, ta, tb) {
                return hit.max(MIN_DEPTH);
            }
        } else if ta == 0.0 && o[2] <= map.height_or_ground(o[0], o[1]) {
            return MIN_DEPTH;
        }
        ta = tb;
        if tx <= tb {
            kx += sx;
            tx = crossing(gx0, d[0], kx);
        }
        if ty <= tb {
            ky += sy;
            ty = crossing(gy0, d[1], ky);
        }
    }
    range
}

/// When the ray stays above the highest node of the block containing the
/// cell span [ta, tb] until it leaves that block, the exit distance.
fn block_exit(map: &HeightMap, blocks: &BlockMax, o: [f64; 3], d: [f64; 3], ta: f64, tb: f64, range: f64) -> Option<f64> {
    let tm = 0.5 * (ta + tb);
    let (mx, my) = (o[0] + tm * d[0], o[1] + tm * d[1]);
    if !map.contains(mx, my) {
        return None;
    }
    let res = map.resolution;
    let cx = (((mx - map.origin.0) / res).floor() as usize).min(map.length_cells - 2);
    let cy = (((my - map.origin.1) / res).floor() as usize).min(map.width_cells - 2);
    let top = blocks.at(cx, cy);
    let exit = |g0: f64, dk: f64, c: usize| -> f64 {
        let b = (c / BLOCK) as f64 * BLOCK as f64;
        let line = if dk > 0.0 {
            b + BLOCK as f64
        } else if dk < 0.0 {
            b
        } else {
            return f64::INFINITY;
        };
        (line - g0) * res / dk
    };
    let gx0 = (o[0] - map.origin.0) / res;
    let gy0 = (o[1] - map.origin.1) / res;
    let te = exit(gx0, d[0], cx).min(exit(gy0, d[1], cy)).min(range);
    if te <= tb {
        return None;
    }
    let z_min = (o[2] + ta * d[2]).min(o[2] + te * d[2]);
    (z_min > top).then_some(te)
}

/// First t in [ta, tb] where the ray is at or below the terrain, assuming the
/// span lies inside a single grid cell or entirely off the map.
fn intersect_span(map: &HeightMap, o: [f64; 3], d: [f64; 3], ta: f64, tb: f64) -> Option<f64> {
    let tm = 0.5 * (ta + tb);
    let (mx, my) = (o[0] + tm * d[0], o[1] + tm * d[1]);
    let res = map.resolution;
    let len = tb - ta;
    let (pxa, pya, pza) = (o[0] + ta * d[0], o[1] + ta * d[1], o[2] + ta * d[2]);

    if !map.contains(mx, my) {
        // flat ground at z = 0
        if pza <= 0.0 {
            return Some(ta);
        }
        if d[2] < 0.0 {
            let s = -pza / d[2];
            if s <= len {
                return Some(ta + s);
            }
        }
        return None;
    }

    let ix = (((mx - map.origin.0) / res).floor() as usize).min(map.length_cells - 2);
    let iy = (((my - map.origin.1) / res).floor() as usize).min(map.width_cells - 2);
    let h00 = map.node(ix, iy);
    let h10 = map.node(ix + 1, iy);
    let h01 = map.node(ix, iy + 1);
    let h11 = map.node(ix + 1, iy + 1);
    let pzb = pza + len * d[2];
    if pza.min(pzb) > h00.max(h10).max(h01).max(h11) {
        return None;
    }

    let (nx, ny) = map.node_xy(ix, iy);
    let u0 = (pxa - nx) / res;
    let v0 = (pya - ny) / res;
    let du = d[0] / res;
    let dv = d[1] / res;
    let a = h10 - h00;
    let b = h01 - h00;
    let c = h00 - h10 - h01 + h11;
    // f(s) = ray z - surface z, s in [0, len]
    let f0 = pza - (h00 + a * u0 + b * v0 + c * u0 * v0);
    let f1 = d[2] - (a * du + b * dv + c * (u0 * dv + v0 * du));
    let f2 = -c * du * dv;
    let f = |s: f64| f0 + s * (f1 + s * f2);

    if f0 <= 0.0 {
        return Some(ta);
    }
    let root = smallest_root(f2, f1, f0, len);
    match root {
        Some(s) => Some(ta + s),
        None if f(len) <= 0.0 => Some(tb),
        None => None,
    }
}

/// Smallest root of `a s^2 + b s + c` in [0, hi], given c > 0.
fn smallest_root(a: f64, b: f64, c: f64, hi: f64) -> Option<f64> {
    let scale = b.abs().max(c.abs()).max(1e-300);
    if a.abs() * hi * hi <= 1e-14 * scale {
        if b < 0.0 {
            let s = -c / b;
            return (s <= hi).then_some(s);
        }
        return None;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let mut roots = [q / a, if q != 0.0 { c / q } else { f64::INFINITY }];
    roots.sort_by(|x, y| x.total_cmp(y));
    roots.into_iter().find(|s| *s >= 0.0 && *s <= hi)
}

/// Progress direction and finish line of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub goal_x: f64,
    /// +1 when driving toward +x, -1 toward -x.
    pub direction: f64,
}

impl Goal {
    /// Finish line `margin` before the far end of a course of `length`.
    pub fn forward(length: f64, margin: f64) -> Self {
        Self { goal_x: length - margin, direction: 1.0 }
    }

    pub fn reverse(margin: f64) -> Self {
        Self { goal_x: margin, direction: -1.0 }
    }

    pub fn reached(&self, x: f64) -> bool {
        self.direction * (x - self.goal_x) >= 0.0
    }
}

/// Classify a trial from its state history (oldest first). Terminal states
/// are absorbing.
pub fn trial_status(history: &[VehicleState], goal: &Goal, params: &SimParams) -> Status {
    let Some(last) = history.last() else {
        return Status::Running;
    };
    if last.status.is_terminal() {
        return last.status;
    }
    if goal.reached(last.pose.x) {
        return Status::Succeeded;
    }
    let window_start = last.t - params.stuck_window;
    let first = &history[0];
    if first.t <= window_start + 1e-9 {
        let recent: Vec<f64> = history
            .iter()
            .rev()
            .take_while(|s| s.t > window_start + 1e-9)
            .map(|s| s.ground_speed.planar())
            .collect();
        let mean = recent.iter().sum::<f64>() / recent.len().max(1) as f64;
        if mean < params.stuck_speed {
            return Status::Stuck;
        }
    }
    Status::Running
}
