//! Success-count and traversal-time grid over difficulties, vehicles and
//! controllers, with every trial seeded from one base seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use verti_core::bclearn::{BcParams, BcPolicy, TrainConfig};
use verti_core::controllers::{Controller, OpenLoop, RbParams, RuleBased};
use verti_core::dataset::Demonstration;
use verti_core::rng;
use verti_core::terrain::{generate_course, CourseSpec, Difficulty, HeightMap};
use verti_core::vehicle::VehicleKind;

use crate::demos::{self, BcRecipe};
use crate::trial::{run_trial, Direction, Outcome, TrialResult, TrialSpec, TIMEOUT_S};
use crate::HarnessError;

/// Where the learned policies come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BcMode {
    /// No learned policy in the grid.
    None,
    /// A single untrained policy whose output bias drives straight at the
    /// open-loop speed.
    Bias,
    /// One policy per vehicle trained on scripted demonstrations, each
    /// deployed on both vehicles.
    Scripted,
    /// One policy per vehicle loaded from parameter files.
    Files { v6w: PathBuf, v4w: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub base_seed: u64,
    pub difficulties: Vec<Difficulty>,
    pub vehicles: Vec<VehicleKind>,
    pub trials: usize,
    pub depth_size: usize,
    pub timeout: f64,
    /// Start jitter half-widths: lateral (m), heading (rad).
    pub jitter: (f64, f64),
    pub rb: RbParams,
    pub bc: BcMode,
    /// Demonstration courses per difficulty for [`BcMode::Scripted`].
    pub bc_courses: usize,
    pub bc_epochs: usize,
    pub bc_stride: usize,
    pub bc_max_ticks: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            base_seed: 0,
            difficulties: vec![Difficulty::Easy, Difficulty::Medium, Difficulty::Difficult],
            vehicles: vec![VehicleKind::V6W, VehicleKind::V4W],
            trials: 10,
            depth_size: verti_core::sim::DEFAULT_DEPTH_SIZE,
            timeout: TIMEOUT_S,
            jitter: (0.05, 0.05),
            rb: RbParams::default(),
            bc: BcMode::Scripted,
            bc_courses: 1,
            bc_epochs: 15,
            bc_stride: 2,
            bc_max_ticks: 400,
        }
    }
}

impl BenchConfig {
    /// Flat courses with the open-loop, rule-based and bias-initialized
    /// learned controllers.
    pub fn smoke(base_seed: u64) -> Self {
        Self { base_seed, difficulties: vec![Difficulty::Flat], bc: BcMode::Bias, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 || self.difficulties.is_empty() || self.vehicles.is_empty() {
            return Err(HarnessError::Config("need at least one trial, difficulty and vehicle".into()));
        }
        if self.bc != BcMode::None && self.depth_size < verti_core::bclearn::SIDE {
            return Err(HarnessError::Config(format!(
                "depth size {} is below the learned policy input of {}",
                self.depth_size,
                verti_core::bclearn::SIDE
            )));
        }
        if self.depth_size < 8 {
            return Err(HarnessError::Config(format!("depth size {} is below 8", self.depth_size)));
        }
        if !(self.timeout > 0.0 && self.timeout <= TIMEOUT_S) {
            return Err(HarnessError::Config(format!("timeout must be in (0, {TIMEOUT_S}]")));
        }
        self.rb.validate()?;
        Ok(())
    }

    /// Course used for `difficulty`, shared by every vehicle and controller.
    pub fn course(&self, difficulty: Difficulty) -> CourseSpec {
        CourseSpec::new(difficulty, rng::derive(self.base_seed, 1 + difficulty as u64))
    }

    /// Demonstration courses, disjoint in seed from the benchmark courses.
    pub fn demo_courses(&self) -> Vec<CourseSpec> {
        self.difficulties
            .iter()
            .flat_map(|d| {
                (0..self.bc_courses).map(move |k| {
                    CourseSpec::new(*d, rng::derive(self.base_seed, 1000 + 10 * (*d as u64) + k as u64))
                })
            })
            .collect()
    }

    /// Jitter seed of trial `i`; identical across vehicles and controllers.
    pub fn trial_seed(&self, difficulty: Difficulty, i: usize) -> u64 {
        rng::derive(rng::derive(self.base_seed, 100 + difficulty as u64), i as u64)
    }

    /// First half of the trials (rounded up) runs forward, the rest reverse.
    pub fn direction(&self, i: usize) -> Direction {
        if i < self.trials.div_ceil(2) {
            Direction::Forward
        } else {
            Direction::Reverse
        }
    }
}

/// A controller column of the grid.
#[derive(Debug, Clone)]
pub enum Policy {
    OpenLoop,
    RuleBased(RbParams),
    Learned { label: String, params: Arc<BcParams> },
}

impl Policy {
    pub fn label(&self) -> String {
        match self {
            Self::OpenLoop => "OL".into(),
            Self::RuleBased(_) => "RB".into(),
            Self::Learned { label, .. } => label.clone(),
        }
    }

    pub fn build(&self) -> Box<dyn Controller + Send> {
        match self {
            Self::OpenLoop => Box::new(OpenLoop),
            Self::RuleBased(p) => Box::new(RuleBased::new(*p)),
            Self::Learned { label, params } => Box::new(BcPolicy::new(label.clone(), (**params).clone())),
        }
    }
}

/// Column label of a policy learned on `vehicle`.
pub fn learned_label(vehicle: VehicleKind) -> String {
    match vehicle {
        VehicleKind::V6W => "BC6".into(),
        VehicleKind::V4W => "BC4".into(),
    }
}

pub fn recipe(cfg: &BenchConfig) -> BcRecipe {
    BcRecipe {
        courses: cfg.bc_courses,
        max_ticks: cfg.bc_max_ticks,
        stride: cfg.bc_stride,
        train: TrainConfig { epochs: cfg.bc_epochs, seed: rng::derive(cfg.base_seed, 7), ..TrainConfig::default() },
    }
}

/// The controller columns for `cfg`, training or loading policies as needed.
pub fn policies(cfg: &BenchConfig) -> Result<Vec<Policy>, HarnessError> {
    let mut out = vec![Policy::OpenLoop, Policy::RuleBased(cfg.rb)];
    match &cfg.bc {
        BcMode::None => {}
        BcMode::Bias => out.push(Policy::Learned { label: "BC".into(), params: Arc::new(BcParams::constant(0.5, 0.0)) }),
        BcMode::Scripted => {
            let courses = cfg.demo_courses();
            let recipe = recipe(cfg);
            for v in [VehicleKind::V6W, VehicleKind::V4W] {
                let params = demos::train_scripted(v, &courses, &recipe, cfg.depth_size)?;
                out.push(Policy::Learned { label: learned_label(v), params: Arc::new(params) });
            }
        }
        BcMode::Files { v6w, v4w } => {
            for (v, path) in [(VehicleKind::V6W, v6w), (VehicleKind::V4W, v4w)] {
                let params = BcParams::load(path)?;
                out.push(Policy::Learned { label: learned_label(v), params: Arc::new(params) });
            }
        }
    }
    Ok(out)
}

/// Aggregate of one (vehicle, difficulty, controller) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub vehicle: VehicleKind,
    pub difficulty: Difficulty,
    pub controller: String,
    pub trials: usize,
    pub successes: usize,
    /// Mean traversal time of successful trials.
    pub mean_time: Option<f64>,
    /// Population variance of successful traversal times.
    pub variance_time: Option<f64>,
    pub failures: BTreeMap<String, usize>,
}

impl Cell {
    pub fn from_results(results: &[&TrialResult]) -> Self {
        let first = results[0];
        let times: Vec<f64> = results.iter().filter_map(|r| r.traversal_time).collect();
        let n = times.len() as f64;
        let mean = (!times.is_empty()).then(|| times.iter().sum::<f64>() / n);
        let variance = mean.map(|m| times.iter().map(|t| (t - m).powi(2)).sum::<f64>() / n);
        let mut failures = BTreeMap::new();
        for r in results.iter().filter(|r| r.outcome != Outcome::Succeeded) {
            *failures.entry(r.outcome.to_string()).or_insert(0) += 1;
        }
        Self {
            vehicle: first.vehicle,
            difficulty: first.difficulty,
            controller: first.controller.clone(),
            trials: results.len(),
            successes: times.len(),
            mean_time: mean,
            variance_time: variance,
            failures,
        }
    }

    pub fn summary(&self) -> String {
        match (self.mean_time, self.variance_time) {
            (Some(m), Some(v)) => format!("{} ({m:.1}±{v:.1})", self.successes),
            _ => format!("{} (-)", self.successes),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub config: BenchConfig,
    pub controllers: Vec<String>,
    pub cells: Vec<Cell>,
    pub results: Vec<TrialResult>,
}

/// Run every trial of the grid. Trials are independent and run
/// concurrently; results are kept in grid order.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchTable, HarnessError> {
    cfg.validate()?;
    let policies = policies(cfg)?;
    let (cells, results) = run_grid(cfg, &policies, &cfg.vehicles)?;
    Ok(BenchTable { config: cfg.clone(), controllers: policies.iter().map(Policy::label).collect(), cells, results })
}

/// Trials of `policies` on `vehicles` over the difficulties of `cfg`,
/// grouped into cells in (vehicle, difficulty, policy) order.
pub fn run_grid(
    cfg: &BenchConfig,
    policies: &[Policy],
    vehicles: &[VehicleKind],
) -> Result<(Vec<Cell>, Vec<TrialResult>), HarnessError> {
    let maps: Vec<(Difficulty, Arc<HeightMap>)> = cfg
        .difficulties
        .iter()
        .map(|d| Ok((*d, Arc::new(generate_course(&cfg.course(*d))?))))
        .collect::<Result<_, HarnessError>>()?;

    let mut jobs = Vec::new();
    for vehicle in vehicles {
        for (difficulty, map) in &maps {
            for policy in policies {
                for i in 0..cfg.trials {
                    jobs.push((*vehicle, *difficulty, map.clone(), policy, i));
                }
            }
        }
    }
    let results = jobs
        .into_par_iter()
        .map(|(vehicle, difficulty, map, policy, i)| {
            let spec = TrialSpec {
                timeout: cfg.timeout,
                depth_size: cfg.depth_size,
                jitter: cfg.jitter,
                ..TrialSpec::new(cfg.course(difficulty), vehicle, cfg.direction(i), cfg.trial_seed(difficulty, i))
            };
            let mut ctl = policy.build();
            run_trial(ctl.as_mut(), map, &spec)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cells = results.chunks(cfg.trials).map(|c| Cell::from_results(&c.iter().collect::<Vec<_>>())).collect();
    Ok((cells, results))
}

/// A policy learned on one vehicle, evaluated on that vehicle and on another.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossResult {
    pub label: String,
    pub own: Vec<Cell>,
    pub cross: Vec<Cell>,
}

/// Train on `demos` recorded with `train_vehicle`, then run the grid of
/// `cfg` with the learned policy on `train_vehicle` (own rows) and on
/// `deploy_vehicle` (cross rows).
pub fn cross_deploy(
    train_vehicle: VehicleKind,
    deploy_vehicle: VehicleKind,
    demos: &[Demonstration],
    stride: usize,
    train: &TrainConfig,
    cfg: &BenchConfig,
) -> Result<CrossResult, HarnessError> {
    if let Some(d) = demos.iter().find(|d| d.manifest.vehicle != train_vehicle) {
        return Err(HarnessError::Config(format!(
            "demonstration {} was recorded on {}, not {train_vehicle}",
            d.manifest.trial_id, d.manifest.vehicle
        )));
    }
    let mut samples = Vec::new();
    for d in demos {
        samples.extend(d.samples(stride)?);
    }
    let params = verti_core::bclearn::train(&samples, train)?.params;
    let label = learned_label(train_vehicle);
    let policy = [Policy::Learned { label: label.clone(), params: Arc::new(params) }];
    let (own, _) = run_grid(cfg, &policy, &[train_vehicle])?;
    let cross = if deploy_vehicle == train_vehicle { own.clone() } else { run_grid(cfg, &policy, &[deploy_vehicle])?.0 };
    Ok(CrossResult { label, own, cross })
}

impl BenchTable {
    pub fn cell(&self, vehicle: VehicleKind, difficulty: Difficulty, controller: &str) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.vehicle == vehicle && c.difficulty == difficulty && c.controller == controller)
    }

    /// Plain-text grid: one row per difficulty, one column group per
    /// vehicle, one column per controller.
    pub fn report_text(&self) -> String {
        let cfg = &self.config;
        let width = 16;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "base seed {}, {} trials per cell ({} forward, {} reverse), depth {}x{}, timeout {} s",
            cfg.base_seed,
            cfg.trials,
            cfg.trials.div_ceil(2),
            cfg.trials / 2,
            cfg.depth_size,
            cfg.depth_size,
            cfg.timeout
        );
        let _ = writeln!(s, "successful trials out of {} (mean ± variance of successful traversal times, s)", cfg.trials);
        let _ = writeln!(s);
        let _ = write!(s, "{:<10}", "");
        for v in &cfg.vehicles {
            let _ = write!(s, " | {:<w$}", v.name(), w = width * self.controllers.len());
        }
        let _ = writeln!(s);
        let _ = write!(s, "{:<10}", "");
        for _ in &cfg.vehicles {
            let _ = write!(s, " | ");
            for c in &self.controllers {
                let _ = write!(s, "{c:<width$}");
            }
        }
        let _ = writeln!(s);
        for d in &cfg.difficulties {
            let _ = write!(s, "{:<10}", d.name());
            for v in &cfg.vehicles {
                let _ = write!(s, " | ");
                for c in &self.controllers {
                    let text = self.cell(*v, *d, c).map(Cell::summary).unwrap_or_default();
                    let _ = write!(s, "{text:<width$}");
                }
            }
            let _ = writeln!(s);
        }
        let failed: Vec<&Cell> = self.cells.iter().filter(|c| !c.failures.is_empty()).collect();
        if !failed.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "failures");
        }
        for cell in failed {
            let parts: Vec<String> = cell.failures.iter().map(|(k, n)| format!("{k} {n}")).collect();
            let _ = writeln!(s, "  {} {} {}: {}", cell.vehicle, cell.difficulty, cell.controller, parts.join(", "));
        }
        s
    }

    /// One comma-separated line per cell.
    pub fn report_csv(&self) -> String {
        let mut s = String::from("vehicle,difficulty,controller,trials,successes,mean_time,variance_time,stuck,tipped,timeout,boundary\n");
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_default();
        for c in &self.cells {
            let f = |k: &str| c.failures.get(k).copied().unwrap_or(0);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.vehicle,
                c.difficulty,
                c.controller,
                c.trials,
                c.successes,
                opt(c.mean_time),
                opt(c.variance_time),
                f("Stuck"),
                f("Tipped"),
                f("Timeout"),
                f("Boundary")
            );
        }
        s
    }

    /// One comma-separated line per trial.
    pub fn trials_csv(&self) -> String {
        let mut s = String::from("vehicle,difficulty,controller,trial,direction,seed,outcome,traversal_time,elapsed,final_x\n");
        for (i, r) in self.results.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{:?},{},{},{},{:.4},{:.6}",
                r.vehicle,
                r.difficulty,
                r.controller,
                i % self.config.trials,
                r.direction,
                r.seed,
                r.outcome,
                r.traversal_time.map(|t| format!("{t:.4}")).unwrap_or_default(),
                r.elapsed,
                r.final_x
            );
        }
        s
    }
}
