//! Headless demonstrations driven by the rule-based controller, standing in
//! for an operator.

use std::path::Path;
use std::sync::Arc;

use verti_core::bclearn::{self, BcParams, Sample, TrainConfig};
use verti_core::controllers::{Controller, RbParams, RuleBased};
use verti_core::dataset::{self, DataFrame, Demonstration, Manifest, Recorder};
use verti_core::sim::Session;
use verti_core::terrain::{generate_course, CourseSpec, HeightMap};
use verti_core::vehicle::{Action, VehicleError, VehicleKind};

use crate::trial::Direction;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoSpec {
    pub course: CourseSpec,
    pub vehicle: VehicleKind,
    pub direction: Direction,
    pub max_ticks: usize,
    pub depth_size: usize,
    pub rb: RbParams,
}

impl DemoSpec {
    pub fn new(course: CourseSpec, vehicle: VehicleKind, direction: Direction) -> Self {
        Self {
            course,
            vehicle,
            direction,
            max_ticks: 600,
            depth_size: verti_core::sim::DEFAULT_DEPTH_SIZE,
            rb: RbParams::default(),
        }
    }
}

/// Drive the course with the rule-based controller and keep every tick as a
/// frame: step with the held command, observe, choose the next command. The
/// returned demonstration equals what [`dataset::load`] reads back from
/// `out` when a directory is given.
pub fn record_scripted(spec: &DemoSpec, map: Arc<HeightMap>, out: Option<&Path>) -> Result<Demonstration, HarnessError> {
    let length = spec.course.length();
    let mut sim = Session::new(
        map,
        spec.vehicle.geometry(),
        Default::default(),
        spec.direction.start_pose(length),
        Some(spec.direction.goal(length)),
    )?;
    sim.depth_size = spec.depth_size;
    let mut manifest = Manifest::new(spec.vehicle, format!("scripted-{}-{}", spec.course.difficulty, spec.course.seed));
    manifest.course_seed = Some(spec.course.seed);
    manifest.course_difficulty = Some(spec.course.difficulty);
    let mut recorder = out.map(|dir| Recorder::create(dir, manifest.clone())).transpose()?;

    let mut rb = RuleBased::new(spec.rb);
    let mut cmd = Action::stop();
    let mut frames = Vec::new();
    let mut depth = Vec::new();
    for i in 0..spec.max_ticks {
        match sim.advance(&cmd) {
            Ok(_) => {}
            Err(VehicleError::Boundary { .. }) => break,
            Err(e) => return Err(e.into()),
        }
        let obs = sim.observe(true);
        cmd = rb.act(&obs)?;
        let image = obs.depth.as_ref().expect("depth requested");
        let frame = match recorder.as_mut() {
            Some(r) => r.record_frame(&obs, &cmd)?,
            None => DataFrame::from_parts(obs.t, dataset::depth_ref(i), &obs, &cmd).quantized(),
        };
        frames.push(frame);
        depth.push(dataset::depth_from_pgm(&dataset::depth_to_pgm(image)));
        if sim.status().is_terminal() {
            break;
        }
    }
    manifest.frame_count = frames.len();
    if let Some(r) = recorder {
        r.finish()?;
    }
    Ok(Demonstration { manifest, frames, depth })
}

/// Settings for learning a policy from scripted demonstrations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcRecipe {
    /// Courses per difficulty, each driven in both directions.
    pub courses: usize,
    pub max_ticks: usize,
    /// Keep every `stride`-th frame.
    pub stride: usize,
    pub train: TrainConfig,
}

impl Default for BcRecipe {
    fn default() -> Self {
        Self { courses: 1, max_ticks: 400, stride: 2, train: TrainConfig { epochs: 15, ..TrainConfig::default() } }
    }
}

/// Training samples from scripted runs of `vehicle` on the given courses.
pub fn scripted_samples(
    vehicle: VehicleKind,
    courses: &[CourseSpec],
    recipe: &BcRecipe,
    depth_size: usize,
) -> Result<Vec<Sample>, HarnessError> {
    let mut samples = Vec::new();
    for course in courses {
        let map = Arc::new(generate_course(course)?);
        for direction in [Direction::Forward, Direction::Reverse] {
            let spec = DemoSpec { max_ticks: recipe.max_ticks, depth_size, ..DemoSpec::new(*course, vehicle, direction) };
            let demo = record_scripted(&spec, map.clone(), None)?;
            samples.extend(demo.samples(recipe.stride)?);
        }
    }
    Ok(samples)
}

/// Train a policy on scripted demonstrations of `vehicle`.
pub fn train_scripted(
    vehicle: VehicleKind,
    courses: &[CourseSpec],
    recipe: &BcRecipe,
    depth_size: usize,
) -> Result<BcParams, HarnessError> {
    let samples = scripted_samples(vehicle, courses, recipe, depth_size)?;
    Ok(bclearn::train(&samples, &recipe.train)?.params)
}
