//! Rock-course heightmaps: generation, bilinear queries and PGM exchange.
//!
//! Grid node `(ix, iy)` sits at `origin + (ix, iy) * resolution`; `ix` runs
//! along the course length (world x) and `iy` across its width (world y).
//! Heights are stored row-major with `iy` as the row.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pgm::{self, Gray16};
use crate::rng;

/// Flat ground added beyond both ends of the course. A vehicle parked in a
/// staging zone has every wheel on the map, with room to back up a full
/// recovery maneuver.
pub const APRON_M: f64 = 1.2;
/// Length of the flat staging zone at each end of the course.
pub const STAGING_M: f64 = 0.4;

const ROCK_RADIUS_RANGE: (f64, f64) = (0.10, 0.22);
const DEFAULT_AREA: f64 = 3.1 * 1.3;

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("invalid course spec: {0}")]
    InvalidSpec(String),
    #[error("invalid heightmap: {0}")]
    InvalidMap(String),
    #[error("query ({x:.4}, {y:.4}) is outside the map")]
    OutOfBounds { x: f64, y: f64 },
    #[error("query ({x:.4}, {y:.4}) is within one cell of the map boundary")]
    NearBoundary { x: f64, y: f64 },
    #[error("heightmap io: {0}")]
    Io(#[from] std::io::Error),
    #[error("heightmap format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    Flat,
    Easy,
    Medium,
    Difficult,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [Self::Flat, Self::Easy, Self::Medium, Self::Difficult];

    pub fn elevation_cap(self) -> f64 {
        match self {
            Self::Flat => 0.0,
            Self::Easy => 0.20,
            Self::Medium => 0.35,
            Self::Difficult => 0.50,
        }
    }

    /// Rock count on the default 3.1 x 1.3 m course.
    pub fn rock_count(self) -> usize {
        match self {
            Self::Flat => 0,
            Self::Easy => 25,
            Self::Medium => 45,
            Self::Difficult => 70,
        }
    }

    pub fn block_count(self) -> usize {
        match self {
            Self::Difficult => 5,
            _ => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Flat => "Flat",
            Self::Easy => "Easy",
            Self::Medium => "Medium",
            Self::Difficult => "Difficult",
        }
    }
}

impl std::str::FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "flat" => Ok(Self::Flat),
            "easy" => Ok(Self::Easy),
            "medium" => Ok(Self::Medium),
            "difficult" | "hard" => Ok(Self::Difficult),
            other => Err(format!("unknown difficulty {other:?}")),
        }
    }
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CourseSpec {
    pub difficulty: Difficulty,
    pub seed: u64,
    /// (length, width) in meters.
    pub dims: (f64, f64),
    pub resolution: f64,
}

impl CourseSpec {
    pub fn new(difficulty: Difficulty, seed: u64) -> Self {
        Self { difficulty, seed, dims: (3.1, 1.3), resolution: 0.02 }
    }

    pub fn length(&self) -> f64 {
        self.dims.0
    }

    pub fn width(&self) -> f64 {
        self.dims.1
    }

    pub fn validate(&self) -> Result<(), TerrainError> {
        let (l, w) = self.dims;
        if !(l.is_finite() && w.is_finite() && l > 0.0 && w > 0.0) {
            return Err(TerrainError::InvalidSpec(format!("dims must be positive, got ({l}, {w})")));
        }
        if !(self.resolution > 0.0 && self.resolution <= 0.1) {
            return Err(TerrainError::InvalidSpec(format!(
                "resolution must be in (0, 0.1], got {}",
                self.resolution
            )));
        }
        if l <= 2.0 * STAGING_M {
            return Err(TerrainError::InvalidSpec(format!(
                "course length {l} leaves no room between the staging zones"
            )));
        }
        Ok(())
    }
}

/// Half-ellipsoid rock resting on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rock {
    pub center: (f64, f64),
    pub radii: (f64, f64, f64),
    pub yaw: f64,
}

impl Rock {
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.yaw.sin_cos();
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let q = 1.0 - (lx / self.radii.0).powi(2) - (ly / self.radii.1).powi(2);
        if q > 0.0 {
            self.radii.2 * q.sqrt()
        } else {
            0.0
        }
    }
}

/// Axis-aligned flat-topped block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub min: (f64, f64),
    pub max: (f64, f64),
    pub height: f64,
}

impl Block {
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        if x >= self.min.0 && x <= self.max.0 && y >= self.min.1 && y <= self.max.1 {
            self.height
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightMap {
    /// Nodes across the course (world y).
    pub width_cells: usize,
    /// Nodes along the course (world x).
    pub length_cells: usize,
    pub resolution: f64,
    pub origin: (f64, f64),
    pub heights: Vec<f64>,
}

impl HeightMap {
    pub fn new(
        width_cells: usize,
        length_cells: usize,
        resolution: f64,
        origin: (f64, f64),
        heights: Vec<f64>,
    ) -> Result<Self, TerrainError> {
        if width_cells < 2 || length_cells < 2 {
            return Err(TerrainError::InvalidMap(format!(
                "need at least 2x2 nodes, got {length_cells}x{width_cells}"
            )));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(TerrainError::InvalidMap(format!("resolution {resolution}")));
        }
        if heights.len() != width_cells * length_cells {
            return Err(TerrainError::InvalidMap(format!(
                "expected {} heights, got {}",
                width_cells * length_cells,
                heights.len()
            )));
        }
        if let Some(bad) = heights.iter().find(|h| !(h.is_finite() && **h >= 0.0)) {
            return Err(TerrainError::InvalidMap(format!("height {bad} is not finite and non-negative")));
        }
        Ok(Self { width_cells, length_cells, resolution, origin, heights })
    }

    /// Build a map by sampling `f` at every node.
    pub fn from_fn(
        width_cells: usize,
        length_cells: usize,
        resolution: f64,
        origin: (f64, f64),
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, TerrainError> {
        let mut heights = Vec::with_capacity(width_cells * length_cells);
        for iy in 0..width_cells {
            for ix in 0..length_cells {
                let (x, y) = node_xy(origin, resolution, ix, iy);
                heights.push(f(x, y));
            }
        }
        Self::new(width_cells, length_cells, resolution, origin, heights)
    }

    pub fn node(&self, ix: usize, iy: usize) -> f64 {
        self.heights[iy * self.length_cells + ix]
    }

    pub fn node_xy(&self, ix: usize, iy: usize) -> (f64, f64) {
        node_xy(self.origin, self.resolution, ix, iy)
    }

    pub fn x_max(&self) -> f64 {
        self.origin.0 + (self.length_cells - 1) as f64 * self.resolution
    }

    pub fn y_max(&self) -> f64 {
        self.origin.1 + (self.width_cells - 1) as f64 * self.resolution
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.origin.0 && x <= self.x_max() && y >= self.origin.1 && y <= self.y_max()
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Bilinear interpolation of the four surrounding nodes.
    pub fn height_at(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        if !self.contains(x, y) {
            return Err(TerrainError::OutOfBounds { x, y });
        }
        Ok(self.interpolate(x, y))
    }

    /// Like [`height_at`](Self::height_at) but reads 0 outside the map.
    pub fn height_or_ground(&self, x: f64, y: f64) -> f64 {
        if self.contains(x, y) {
            self.interpolate(x, y)
        } else {
            0.0
        }
    }

    fn interpolate(&self, x: f64, y: f64) -> f64 {
        let fx = snap((x - self.origin.0) / self.resolution);
        let fy = snap((y - self.origin.1) / self.resolution);
        let ix = (fx.floor().max(0.0) as usize).min(self.length_cells - 2);
        let iy = (fy.floor().max(0.0) as usize).min(self.width_cells - 2);
        let u = fx - ix as f64;
        let v = fy - iy as f64;
        let h00 = self.node(ix, iy);
        let h10 = self.node(ix + 1, iy);
        let h01 = self.node(ix, iy + 1);
        let h11 = self.node(ix + 1, iy + 1);
        (1.0 - v) * ((1.0 - u) * h00 + u * h10) + v * ((1.0 - u) * h01 + u * h11)
    }

    /// Central-difference gradient `(dz/dx, dz/dy)` with step = resolution.
    pub fn slope_at(&self, x: f64, y: f64) -> Result<(f64, f64), TerrainError> {
        let r = self.resolution;
        let inside = x - r >= self.origin.0
            && x + r <= self.x_max()
            && y - r >= self.origin.1
            && y + r <= self.y_max();
        if !inside {
            return Err(TerrainError::NearBoundary { x, y });
        }
        let dzdx = (self.interpolate(x + r, y) - self.interpolate(x - r, y)) / (2.0 * r);
        let dzdy = (self.interpolate(x, y + r) - self.interpolate(x, y - r)) / (2.0 * r);
        Ok((dzdx, dzdy))
    }

    /// Write `<path>` as a 16-bit millimeter PGM and `<path>.txt` as the
    /// key=value sidecar.
    pub fn save(&self, path: &Path) -> Result<(), TerrainError> {
        let img = Gray16 {
            width: self.length_cells,
            height: self.width_cells,
            data: self.heights.iter().map(|h| pgm::meters_to_mm(*h)).collect(),
        };
        fs::write(path, pgm::encode(&img))?;
        let meta = format!(
            "resolution={}\norigin_x={}\norigin_y={}\n",
            self.resolution, self.origin.0, self.origin.1
        );
        fs::write(sidecar_path(path), meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TerrainError> {
        let img = pgm::decode(&fs::read(path)?).map_err(|e| TerrainError::Format(e.to_string()))?;
        let meta = fs::read_to_string(sidecar_path(path))?;
        let mut resolution = None;
        let mut origin_x = None;
        let mut origin_y = None;
        for line in meta.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TerrainError::Format(format!("bad sidecar line {line:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| TerrainError::Format(format!("bad number in {line:?}")))?;
            match k.trim() {
                "resolution" => resolution = Some(v),
                "origin_x" => origin_x = Some(v),
                "origin_y" => origin_y = Some(v),
                _ => {}
            }
        }
        let missing = |k: &str| TerrainError::Format(format!("sidecar is missing {k}"));
        Self::new(
            img.height,
            img.width,
            resolution.ok_or_else(|| missing("resolution"))?,
            (origin_x.ok_or_else(|| missing("origin_x"))?, origin_y.ok_or_else(|| missing("origin_y"))?),
            img.data.into_iter().map(pgm::mm_to_meters).collect(),
        )
    }
}

fn node_xy(origin: (f64, f64), res: f64, ix: usize, iy: usize) -> (f64, f64) {
    (origin.0 + ix as f64 * res, origin.1 + iy as f64 * res)
}

pub fn sidecar_path(pgm: &Path) -> PathBuf {
    let mut s = pgm.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Grid coordinate with node positions made exact: `node_xy` followed by
/// the inverse map can land a few ulps off the integer.
fn snap(g: f64) -> f64 {
    let r = g.round();
    if (g - r).abs() < 1e-12 {
        r
    } else {
        g
    }
}

/// Obstacles placed for a course, in placement order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Obstacles {
    pub rocks: Vec<Rock>,
    pub blocks: Vec<Block>,
}

/// Draw the obstacle layout for `spec`. Pure function of the spec.
pub fn place_obstacles(spec: &CourseSpec) -> Obstacles {
    let mut r = rng::seeded(spec.seed);
    let (length, width) = spec.dims;
    let cap = spec.difficulty.elevation_cap();
    let area_scale = length * width / DEFAULT_AREA;
    let n_rocks = (spec.difficulty.rock_count() as f64 * area_scale).round() as usize;
    let n_blocks = (spec.difficulty.block_count() as f64 * area_scale).round() as usize;
    let half_w = width / 2.0;

    let mut out = Obstacles::default();
    for _ in 0..n_rocks {
        let cx = r.random_range(STAGING_M..length - STAGING_M);
        let cy = r.random_range(-half_w..half_w);
        let rx = r.random_range(ROCK_RADIUS_RANGE.0..ROCK_RADIUS_RANGE.1);
        let ry = r.random_range(ROCK_RADIUS_RANGE.0..ROCK_RADIUS_RANGE.1);
        let rz = r.random_range(0.3 * cap..cap);
        let yaw = r.random_range(0.0..PI);
        out.rocks.push(Rock { center: (cx, cy), radii: (rx, ry, rz), yaw });
    }
    for _ in 0..n_blocks {
        let sx = r.random_range(0.15..0.30);
        let sy = r.random_range(0.10..0.20);
        let h = r.random_range(0.10f64..0.25).min(cap);
        let x0 = r.random_range(STAGING_M..length - STAGING_M - sx);
        let y0 = r.random_range(-half_w..half_w - sy);
        out.blocks.push(Block { min: (x0, y0), max: (x0 + sx, y0 + sy), height: h });
    }
    out
}

/// Generate the course heightmap. The map spans the course plus a flat
/// apron of [`APRON_M`] before and after it; world x = 0 is the start of the
/// course and world y = 0 its centerline.
pub fn generate_course(spec: &CourseSpec) -> Result<HeightMap, TerrainError> {
    spec.validate()?;
    let (length, width) = spec.dims;
    let res = spec.resolution;
    let length_cells = ((length + 2.0 * APRON_M) / res).round() as usize + 1;
    let width_cells = (width / res).round() as usize + 1;
    let origin = (-APRON_M, -width / 2.0);
    let obstacles = place_obstacles(spec);
    let cap = spec.difficulty.elevation_cap();
    let eps = 1e-9;
    HeightMap::from_fn(width_cells, length_cells, res, origin, |x, y| {
        if x <= STAGING_M + eps || x >= length - STAGING_M - eps {
            return 0.0;
        }
        let rocks = obstacles.rocks.iter().map(|r| r.height_at(x, y));
        let blocks = obstacles.blocks.iter().map(|b| b.height_at(x, y));
        rocks.chain(blocks).fold(0.0, f64::max).min(cap)
    })
}
