//! Property checks shared by the integration tests and the acceptance suite.
//! Each returns a one-line summary on success and a description of the first
//! violation otherwise.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::Rng as _;
use verti_core::rng;
use verti_core::terrain::{generate_course, CourseSpec, Difficulty, HeightMap};
use verti_core::vehicle::*;

use super::world;

pub type Check = Result<String, String>;

/// Random body pose whose wheel footprints stay on the map for both
/// vehicles.
pub fn random_pose(r: &mut rng::Rng, length: f64) -> (f64, f64, f64) {
    (r.random_range(0.0..length), r.random_range(-0.3..0.3), r.random_range(-PI..PI))
}

/// Renderer vs the conservative march on `poses` random poses of a Medium
/// course. Tolerance is one cell.
pub fn depth_vs_march(poses: usize, size: usize, seed: u64) -> Check {
    let spec = CourseSpec::new(Difficulty::Medium, seed);
    let map = generate_course(&spec).unwrap();
    let params = SimParams::default();
    let mut r = rng::seeded(rng::derive(seed, 1));
    let mut worst = 0.0f64;
    let mut hits = 0usize;
    for i in 0..poses {
        let geom = if i % 2 == 0 { VehicleGeometry::v6w() } else { VehicleGeometry::v4w() };
        let (x, y, yaw) = random_pose(&mut r, spec.length());
        let mut state = VehicleState::spawn(&map, &geom, x, y, yaw, &params).map_err(|e| e.to_string())?;
        state.camera_tilt = r.random_range(-1.05..0.3);
        let img = render_depth(&map, &state, &geom, size, size);
        let oracle = world::depth_image(&map, &state, &geom, size, size, CAMERA_FOV, DepthImage::MAX_RANGE);
        for (k, (a, b)) in img.data.iter().zip(&oracle).enumerate() {
            let diff = (a - b).abs();
            if diff > map.resolution {
                return Err(format!(
                    "pose {i} ({x:.3}, {y:.3}, {yaw:.3}) pixel ({}, {}): render {a:.5} vs march {b:.5}",
                    k % size,
                    k / size
                ));
            }
            worst = worst.max(diff);
            hits += usize::from(*b < DepthImage::MAX_RANGE);
        }
    }
    Ok(format!("{poses} poses at {size}x{size}, {hits} terrain hits, max |diff| {worst:.2e} m"))
}

fn all_patterns(wheels: usize) -> impl Iterator<Item = Vec<bool>> {
    (0..1u32 << wheels).map(move |m| (0..wheels).map(|i| m >> i & 1 == 1).collect())
}

/// Every contact pattern, lock pair, gear and a spread of pitches against the
/// written axle rule, plus lock and gear monotonicity on every row.
pub fn traction_table() -> Check {
    let params = SimParams::default();
    let pitches = [-0.5, -0.1, 0.0, 0.1, 0.3, 0.35, 0.36, 0.5, 0.61, 0.62, 1.0];
    let mut rows = 0usize;
    for geom in [VehicleGeometry::v4w(), VehicleGeometry::v6w()] {
        for contacts in all_patterns(geom.wheel_count()) {
            for &pitch in &pitches {
                let f = |fl: bool, rl: bool, low: bool| traction(&contacts, (fl, rl), low, pitch, &params);
                for fl in [false, true] {
                    for rl in [false, true] {
                        for low in [false, true] {
                            rows += 1;
                            let got = f(fl, rl, low);
                            let want = world::traction_rule(&contacts, fl, rl, low, pitch);
                            if (got - want).abs() > 1e-15 || !(0.0..=1.0).contains(&got) {
                                return Err(format!(
                                    "{} {contacts:?} locks ({fl}, {rl}) low {low} pitch {pitch}: {got} vs {want}",
                                    geom.name
                                ));
                            }
                            let mono = f(true, rl, low) >= f(false, rl, low)
                                && f(fl, true, low) >= f(fl, false, low)
                                && f(fl, rl, true) >= f(fl, rl, false);
                            if !mono {
                                return Err(format!("{} {contacts:?} pitch {pitch}: monotonicity", geom.name));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(format!("{rows} rows"))
}

fn ramp(slope: f64) -> HeightMap {
    HeightMap::from_fn(81, 201, 0.02, (0.0, -0.8), |x, _| slope * x).unwrap()
}

/// Heights 0 right of the centerline and `step` from one cell left of it.
fn left_step(step: f64) -> HeightMap {
    HeightMap::from_fn(81, 201, 0.02, (0.0, -0.8), |_, y| if y > 0.01 { step } else { 0.0 }).unwrap()
}

/// Closed-form roll/pitch on the ramp and single-step fixtures.
pub fn chassis_fixtures() -> Check {
    let tol = 0.005;
    let mut worst = 0.0f64;
    for geom in [VehicleGeometry::v4w(), VehicleGeometry::v6w()] {
        let map = ramp(0.2);
        for (yaw, want) in [(0.0, 0.2f64.atan()), (PI, -(0.2f64.atan()))] {
            let fit = fit_chassis(&map, 2.0, 0.0, yaw, &geom, tol).map_err(|e| e.to_string())?;
            let err = (fit.pitch - want).abs().max(fit.roll.abs());
            if err > 1e-6 || !fit.wheel_contact.iter().all(|c| *c) {
                return Err(format!("{} ramp yaw {yaw}: pitch {} roll {}", geom.name, fit.pitch, fit.roll));
            }
            worst = worst.max(err);
        }
        let map = left_step(0.1);
        let fit = fit_chassis(&map, 2.0, 0.0, 0.0, &geom, tol).map_err(|e| e.to_string())?;
        let want = (0.1 / geom.track_width).atan();
        let err = (fit.roll.abs() - want).abs().max(fit.pitch.abs());
        if err > 1e-6 || fit.roll <= 0.0 {
            return Err(format!("{} step: roll {} pitch {}", geom.name, fit.roll, fit.pitch));
        }
        worst = worst.max(err);
        for (i, c) in fit.wheel_contact.iter().enumerate() {
            if *c != (fit.plane[i] - fit.support[i] <= tol) {
                return Err(format!("{} step: wheel {i} contact flag", geom.name));
            }
        }
    }
    Ok(format!("max angle error {worst:.1e} rad"))
}

/// Fit on `poses` random poses per difficulty, checked against the oracle
/// support heights and least-squares plane: no wheel below the plane, the
/// lift is minimal, and contact flags follow the tolerance.
pub fn non_penetration(poses: usize, seed: u64) -> Check {
    let params = SimParams::default();
    let tol = params.contact_tolerance;
    let mut total = 0usize;
    for d in [Difficulty::Easy, Difficulty::Medium, Difficulty::Difficult] {
        let spec = CourseSpec::new(d, seed);
        let map = generate_course(&spec).unwrap();
        let mut r = rng::seeded(rng::derive(seed, 2 + d as u64));
        for i in 0..poses {
            let geom = if i % 2 == 0 { VehicleGeometry::v6w() } else { VehicleGeometry::v4w() };
            let (x, y, yaw) = random_pose(&mut r, spec.length());
            let fit = fit_chassis(&map, x, y, yaw, &geom, tol).map_err(|e| e.to_string())?;
            let wheels = world::wheels(&geom);
            let support: Vec<f64> = wheels
                .iter()
                .map(|(bx, by)| {
                    let (wx, wy) = world::to_world(x, y, yaw, *bx, *by);
                    world::support(&map, wx, wy, geom.wheel_radius)
                })
                .collect();
            let (_, b, c) = world::ls_plane(&wheels, &support);
            let slope_err = (fit.pitch - b.atan()).abs().max((fit.roll - c.atan()).abs());
            let gaps: Vec<f64> = wheels
                .iter()
                .zip(&support)
                .map(|((bx, by), h)| fit.z + bx * fit.pitch.tan() + by * fit.roll.tan() - h)
                .collect();
            let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
            let bad = slope_err > 1e-9 || min_gap < -1e-9 || min_gap > 1e-9;
            let flags_ok = gaps
                .iter()
                .zip(&fit.wheel_contact)
                .all(|(g, c)| (g - tol).abs() < 1e-9 || *c == (*g <= tol));
            if bad || !flags_ok {
                return Err(format!(
                    "{d} pose {i} ({x:.3}, {y:.3}, {yaw:.3}) {}: slope err {slope_err:.2e}, min gap {min_gap:.2e}, flags ok {flags_ok}",
                    geom.name
                ));
            }
            total += 1;
        }
    }
    Ok(format!("{total} poses over 3 difficulties"))
}

/// Expected (mode name, v, omega) at tick `k` of a permanently stalled run,
/// from the default timings: 40 ticks Forward, 60 Ramp, 40 Backup, 40 left,
/// 40 right.
pub fn stalled_reference(k: usize) -> (&'static str, f64, f64) {
    let p = k % 220;
    match p {
        0..40 => ("Forward", 0.5, 0.0),
        40..100 => ("Ramp", 0.5 + 0.25 * (p - 40) as f64 / 60.0, 0.0),
        100..140 => ("Backup", -0.5, 0.0),
        140..180 => ("SteerLeft", 0.75, 0.314),
        _ => ("SteerRight", 0.75, -0.314),
    }
}

/// Tick-by-tick comparison of the rule-based controller against the stalled
/// reference over `cycles` full recovery cycles, starting at tick `first`.
pub fn fsm_reference(cycles: usize, first: usize) -> Check {
    use verti_core::controllers::{rb_act, FsmState, Observation, RbParams};
    let params = RbParams::default();
    let t0 = first as f64 * 0.05;
    let mut fsm = FsmState::start(t0);
    let mut worst = 0.0f64;
    for k in 0..cycles * 220 {
        let t = (first + k) as f64 * 0.05;
        let obs = Observation::blind([0.5; 4], GroundSpeed::default(), t);
        let (a, next) = rb_act(&obs, &fsm, &params);
        fsm = next;
        let (mode, v, omega) = stalled_reference(k);
        let err = (a.v - v).abs().max((a.omega - omega).abs());
        if fsm.mode.name() != mode || err > 1e-12 || a.d != (true, true) || !a.s {
            return Err(format!(
                "tick {k} (t = {t:.2}): got {} ({}, {}), want {mode} ({v}, {omega})",
                fsm.mode.name(),
                a.v,
                a.omega
            ));
        }
        worst = worst.max(err);
    }
    Ok(format!("{} ticks, exact mode boundaries, max |dv| {worst:.1e}", cycles * 220))
}

fn copy_tree(from: &std::path::Path, to: &std::path::Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &dest);
        } else {
            std::fs::copy(entry.path(), dest).unwrap();
        }
    }
}

fn edit(path: &std::path::Path, f: impl FnOnce(String) -> String) {
    let text = std::fs::read_to_string(path).unwrap();
    std::fs::write(path, f(text)).unwrap();
}

fn edit_field(text: String, line: usize, field: usize, value: &str) -> String {
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut parts: Vec<String> = lines[line].split_whitespace().map(str::to_string).collect();
    parts[field] = value.to_string();
    lines[line] = parts.join(" ");
    lines.join("\n") + "\n"
}

/// Record `frames` ticks of a noisy rule-based run headlessly, reload, and
/// compare every field bit for bit against the raw values after storage
/// quantization; then corrupt copies of the directory in distinct ways and
/// require a distinct loader error for each.
pub fn dataset_round_trip(root: &std::path::Path, frames: usize) -> Check {
    use std::sync::Arc;
    use verti_core::controllers::{Controller, RbParams, RuleBased};
    use verti_core::dataset::{self, DatasetError, Manifest, Recorder};
    use verti_core::sim::Session;

    let spec = CourseSpec::new(Difficulty::Medium, 8);
    let map = Arc::new(generate_course(&spec).unwrap());
    let params = SimParams { sensor_noise_std: 0.01, noise_seed: 5, ..SimParams::default() };
    let geom = VehicleGeometry::v6w();
    let mut sim = Session::new(map, geom, params, (0.2, 0.0, 0.0), Some(Goal::forward(spec.length(), 0.2)))
        .map_err(|e| e.to_string())?;
    sim.depth_size = 32;
    let mut ctl = RuleBased::new(RbParams::default());
    let dir = root.join("trial");
    let mut manifest = Manifest::new(VehicleKind::V6W, "roundtrip");
    manifest.course_seed = Some(8);
    manifest.course_difficulty = Some(Difficulty::Medium);
    let mut rec = Recorder::create(&dir, manifest).map_err(|e| e.to_string())?;
    let mut raw = Vec::new();
    let mut cmd = Action::stop();
    for _ in 0..frames {
        sim.advance(&cmd).map_err(|e| e.to_string())?;
        let obs = sim.observe(true);
        cmd = ctl.act(&obs).map_err(|e| e.to_string())?;
        rec.record_frame(&obs, &cmd).map_err(|e| e.to_string())?;
        raw.push((obs, cmd));
    }
    rec.finish().map_err(|e| e.to_string())?;

    let demo = dataset::load(&dir).map_err(|e| e.to_string())?;
    if demo.len() != frames || demo.manifest.frame_count != frames {
        return Err(format!("reloaded {} frames", demo.len()));
    }
    // reals are stored with nine significant digits, depth in whole millimeters
    let q = |x: f64| -> u64 { format!("{x:.8e}").parse::<f64>().unwrap().to_bits() };
    for (i, ((obs, act), f)) in raw.iter().zip(&demo.frames).enumerate() {
        let want = [obs.t, obs.w[0], obs.w[1], obs.w[2], obs.w[3], obs.g.dx, obs.g.dy, obs.g.z_clearance, act.v, act.omega];
        let got = [f.t, f.w[0], f.w[1], f.w[2], f.w[3], f.g.dx, f.g.dy, f.g.z_clearance, f.v, f.omega];
        if want.iter().zip(&got).any(|(w, g)| q(*w) != g.to_bits()) {
            return Err(format!("frame {i}: reals differ: {want:?} vs {got:?}"));
        }
        let flags = (f.g.flag_speed, f.g.flag_z, f.d, f.s);
        if flags != (obs.g.flag_speed, obs.g.flag_z, act.d, act.s) {
            return Err(format!("frame {i}: flags differ"));
        }
        let depth = obs.depth.as_ref().unwrap();
        let mm = |d: f64| ((d * 1000.0).round() / 1000.0).to_bits();
        if depth.data.iter().zip(&demo.depth[i].data).any(|(a, b)| mm(*a) != b.to_bits()) {
            return Err(format!("frame {i}: depth differs"));
        }
    }
    let (t0, t1) = (demo.frames[0].t, demo.frames[frames - 1].t);

    type Corrupt = (&'static str, fn(&std::path::Path), fn(&DatasetError) -> bool);
    let cases: [Corrupt; 7] = [
        (
            "format version",
            |d| edit(&d.join("manifest.txt"), |t| t.replace("format_version=1", "format_version=2")),
            |e| matches!(e, DatasetError::VersionMismatch { .. }),
        ),
        (
            "truncated records",
            |d| edit(&d.join("records.txt"), |t| t.lines().skip(1).map(|l| format!("{l}\n")).collect()),
            |e| matches!(e, DatasetError::CountMismatch { .. }),
        ),
        (
            "garbage field",
            |d| edit(&d.join("records.txt"), |t| edit_field(t, 3, 6, "fast")),
            |e| matches!(e, DatasetError::MalformedRecord { line: 4, .. }),
        ),
        (
            "non-finite value",
            |d| edit(&d.join("records.txt"), |t| edit_field(t, 5, 14, "NaN")),
            |e| matches!(e, DatasetError::NonFinite { line: 6, field: "v" }),
        ),
        (
            "time goes backwards",
            |d| edit(&d.join("records.txt"), |t| edit_field(t, 10, 0, "1.0e-3")),
            |e| matches!(e, DatasetError::NonMonotonicTime { index: 10, .. }),
        ),
        (
            "missing depth",
            |d| std::fs::remove_file(d.join("depth/000007.pgm")).unwrap(),
            |e| matches!(e, DatasetError::MissingDepth { index: 7, .. }),
        ),
        (
            "truncated depth",
            |d| {
                let p = d.join("depth/000002.pgm");
                let bytes = std::fs::read(&p).unwrap();
                std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
            },
            |e| matches!(e, DatasetError::BadDepth { index: 2, .. }),
        ),
    ];
    let mut seen = std::collections::HashSet::new();
    for (k, (name, corrupt, expect)) in cases.iter().enumerate() {
        let copy = root.join(format!("corrupt{k}"));
        copy_tree(&dir, &copy);
        corrupt(&copy);
        match dataset::validate(&copy) {
            Ok(_) => return Err(format!("{name}: accepted")),
            Err(e) if expect(&e) => {
                seen.insert(std::mem::discriminant(&e));
            }
            Err(e) => return Err(format!("{name}: wrong error {e}")),
        }
    }
    if seen.len() != cases.len() {
        return Err("corruption classes did not map to distinct errors".into());
    }
    Ok(format!("{frames} frames bit-exact, t {t0:.2}..{t1:.2}; {} corruption classes rejected distinctly", cases.len()))
}
