//! Test-only reference evaluations of the terrain and vehicle model.
//!
//! Heights use a tent-kernel sum over grid nodes rather than a cell lookup.
//! Camera rays are built with nalgebra rotations from the pose angles. Depth
//! is found by a slope-bounded march that cannot step over a crossing. Traction and the
//! chassis plane are evaluated from their written rules.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Rotation3, Vector3};
use verti_core::terrain::HeightMap;
use verti_core::vehicle::{VehicleGeometry, VehicleState};

/// Bilinear height as a sum of separable tent kernels over nearby nodes.
/// Points outside the map read 0.
pub fn height(map: &HeightMap, x: f64, y: f64) -> f64 {
    let fx = (x - map.origin.0) / map.resolution;
    let fy = (y - map.origin.1) / map.resolution;
    let (nx, ny) = (map.length_cells as f64 - 1.0, map.width_cells as f64 - 1.0);
    if !(0.0..=nx).contains(&fx) || !(0.0..=ny).contains(&fy) {
        return 0.0;
    }
    let tent = |d: f64| (1.0 - d.abs()).max(0.0);
    let mut acc = 0.0;
    let (cx, cy) = (fx.floor() as i64, fy.floor() as i64);
    for iy in (cy - 1).max(0)..=(cy + 1).min(ny as i64) {
        let wy = tent(fy - iy as f64);
        if wy == 0.0 {
            continue;
        }
        for ix in (cx - 1).max(0)..=(cx + 1).min(nx as i64) {
            let wx = tent(fx - ix as f64);
            if wx != 0.0 {
                acc += wx * wy * map.heights[iy as usize * map.length_cells + ix as usize];
            }
        }
    }
    acc
}

pub fn max_node(map: &HeightMap) -> f64 {
    map.heights.iter().copied().fold(0.0, f64::max)
}

/// Body rotation: yaw about +z, then nose-up pitch, then roll raising the
/// left (+y) side.
pub fn body_rotation(yaw: f64, pitch: f64, roll: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), -pitch)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), roll)
}

/// Camera origin and world ray for one pixel. Camera axes are forward,
/// left, up; rows grow downward and columns grow rightward.
pub fn camera_ray(
    state: &VehicleState,
    geom: &VehicleGeometry,
    width: usize,
    height: usize,
    fov: f64,
    col: usize,
    row: usize,
) -> (Vector3<f64>, Vector3<f64>) {
    let p = state.pose;
    let body = body_rotation(p.yaw, p.pitch, p.roll);
    let (mx, my, mz) = geom.camera_mount;
    let origin = Vector3::new(p.x, p.y, p.z) + body * Vector3::new(mx, my, mz);
    let cam = body * Rotation3::from_axis_angle(&Vector3::y_axis(), -state.camera_tilt);
    let f = (width as f64 / 2.0) / (fov / 2.0).tan();
    let right = (col as f64 + 0.5 - width as f64 / 2.0) / f;
    let down = (row as f64 + 0.5 - height as f64 / 2.0) / f;
    let dir = cam * Vector3::new(1.0, -right, -down).normalize();
    (origin, dir)
}

/// Upper bound on the terrain gradient magnitude: per cell, the largest
/// edge difference along each axis over the resolution.
pub fn max_slope(map: &HeightMap) -> f64 {
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for iy in 0..map.width_cells {
        for ix in 0..map.length_cells {
            let h = map.heights[iy * map.length_cells + ix];
            if ix + 1 < map.length_cells {
                sx = sx.max((map.heights[iy * map.length_cells + ix + 1] - h).abs());
            }
            if iy + 1 < map.width_cells {
                sy = sy.max((map.heights[(iy + 1) * map.length_cells + ix] - h).abs());
            }
        }
    }
    sx.hypot(sy) / map.resolution
}

/// Conservative march. Clearance above the terrain cannot shrink faster
/// than `|d.z| + slope * |d.xy|` per meter of ray, so stepping by clearance
/// over that rate never passes a crossing. A ray that leaves the map never
/// returns to it, and the drop to the outside ground only adds clearance.
/// Stops at clearance 1e-10 m; starts where the ray falls below `top`.
pub fn march(map: &HeightMap, top: f64, slope: f64, o: Vector3<f64>, d: Vector3<f64>, range: f64) -> f64 {
    let rate = d.z.abs() + slope * d.x.hypot(d.y);
    let mut s = if o.z <= top {
        0.0
    } else if d.z >= 0.0 {
        return range;
    } else {
        (o.z - top) / -d.z
    };
    while s < range {
        let q = o + s * d;
        if d.z >= 0.0 && q.z > top {
            return range;
        }
        let gap = q.z - height(map, q.x, q.y);
        if gap <= 1e-10 {
            return s;
        }
        s += (gap / rate).max(1e-12);
    }
    range
}

/// Depth image from [`march`].
pub fn depth_image(map: &HeightMap, state: &VehicleState, geom: &VehicleGeometry, w: usize, h: usize, fov: f64, range: f64) -> Vec<f64> {
    let top = max_node(map);
    let slope = max_slope(map);
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let (o, d) = camera_ray(state, geom, w, h, fov, col, row);
            out.push(march(map, top, slope, o, d, range));
        }
    }
    out
}

/// Axle rule evaluated axle by axle with explicit lock lookup.
pub fn traction_rule(contacts: &[bool], front_lock: bool, rear_lock: bool, low_gear: bool, pitch: f64) -> f64 {
    let axles = contacts.len() / 2;
    let mut driving = 0usize;
    for a in 0..axles {
        let (l, r) = (contacts[2 * a], contacts[2 * a + 1]);
        let lock = if a == 0 { front_lock } else { rear_lock };
        let both = l && r;
        let one = l || r;
        if both || (lock && one) {
            driving += 1;
        }
    }
    let limit = if low_gear { 0.61 } else { 0.35 };
    if pitch > limit {
        return 0.0;
    }
    let base = driving as f64 / axles as f64;
    base * (1.0 - pitch.max(0.0) / limit)
}

/// Five-point footprint support height.
pub fn support(map: &HeightMap, wx: f64, wy: f64, wheel_radius: f64) -> f64 {
    let r = 0.5 * wheel_radius;
    [(0.0, 0.0), (r, 0.0), (-r, 0.0), (0.0, r), (0.0, -r)]
        .iter()
        .map(|(dx, dy)| height(map, wx + dx, wy + dy))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Body-frame wheel centers, axle-major, left (+y) before right.
pub fn wheels(geom: &VehicleGeometry) -> Vec<(f64, f64)> {
    let offsets = &geom.axle_x_offsets;
    let mid = (offsets[0] + offsets[offsets.len() - 1]) / 2.0;
    offsets
        .iter()
        .flat_map(|a| [(a - mid, geom.track_width / 2.0), (a - mid, -geom.track_width / 2.0)])
        .collect()
}

pub fn to_world(x: f64, y: f64, yaw: f64, bx: f64, by: f64) -> (f64, f64) {
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw) * Vector3::new(bx, by, 0.0);
    (x + r.x, y + r.y)
}

/// Least-squares plane `h = a + b·bx + c·by` through the wheel supports via
/// SVD, returning (a, b, c) before lifting.
pub fn ls_plane(points: &[(f64, f64)], h: &[f64]) -> (f64, f64, f64) {
    let a = DMatrix::from_fn(points.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => points[i].0,
        _ => points[i].1,
    });
    let rhs = DVector::from_column_slice(h);
    let sol = a.svd(true, true).solve(&rhs, 1e-14).expect("svd solve");
    (sol[0], sol[1], sol[2])
}
