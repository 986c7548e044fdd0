use std::sync::Arc;

use verti_core::bclearn::TrainConfig;
use verti_core::terrain::{generate_course, CourseSpec, Difficulty};
use verti_core::vehicle::VehicleKind;
use verti_harness::bench::{self, BcMode, BenchConfig, Cell, Policy};
use verti_harness::demos::{self, DemoSpec};
use verti_harness::reference;
use verti_harness::trial::{Direction, Outcome};

/// A small but complete grid: every difficulty, vehicle and controller.
fn small() -> BenchConfig {
    BenchConfig {
        trials: 2,
        depth_size: 32,
        timeout: 6.0,
        bc_epochs: 2,
        bc_max_ticks: 40,
        bc_stride: 4,
        ..BenchConfig::default()
    }
}

#[test]
fn smoke_grid_is_all_successes() {
    let table = bench::run_benchmark(&BenchConfig::smoke(3)).unwrap();
    assert_eq!(table.controllers, ["OL", "RB", "BC"]);
    assert_eq!(table.cells.len(), 6);
    for c in &table.cells {
        assert_eq!((c.successes, c.trials), (10, 10), "{} {}", c.vehicle, c.controller);
    }
    let forward = table.results.iter().filter(|r| r.direction == Direction::Forward).count();
    assert_eq!(forward, table.results.len() / 2);
}

#[test]
fn grid_shape_and_repeatability() {
    let cfg = small();
    let a = bench::run_benchmark(&cfg).unwrap();
    assert_eq!(a.controllers, ["OL", "RB", "BC6", "BC4"]);
    assert_eq!(a.cells.len(), 2 * 3 * 4);
    assert_eq!(a.results.len(), 2 * 3 * 4 * 2);
    for v in [VehicleKind::V6W, VehicleKind::V4W] {
        for d in [Difficulty::Easy, Difficulty::Medium, Difficulty::Difficult] {
            for c in ["OL", "RB", "BC6", "BC4"] {
                let cell = a.cell(v, d, c).unwrap();
                assert!(cell.successes <= cell.trials);
                assert_eq!(cell.successes + cell.failures.values().sum::<usize>(), cell.trials);
            }
        }
    }
    let b = bench::run_benchmark(&cfg).unwrap();
    assert_eq!(a.report_text(), b.report_text());
    assert_eq!(a.report_csv(), b.report_csv());
    assert_eq!(a.trials_csv(), b.trials_csv());
    assert_eq!(a.report_csv().lines().count(), 1 + 24);

    let other = bench::run_benchmark(&BenchConfig { base_seed: 1, ..cfg }).unwrap();
    assert_ne!(a.trials_csv(), other.trials_csv());
}

#[test]
fn cell_statistics() {
    use verti_harness::trial::TrialResult;
    let r = |outcome, t: Option<f64>| TrialResult {
        outcome,
        traversal_time: t,
        seed: 0,
        controller: "OL".into(),
        difficulty: Difficulty::Easy,
        vehicle: VehicleKind::V4W,
        direction: Direction::Forward,
        elapsed: t.unwrap_or(60.0),
        final_x: 0.0,
    };
    let rs = [r(Outcome::Succeeded, Some(10.0)), r(Outcome::Stuck, None), r(Outcome::Succeeded, Some(14.0))];
    let cell = Cell::from_results(&rs.iter().collect::<Vec<_>>());
    assert_eq!((cell.trials, cell.successes), (3, 2));
    assert_eq!(cell.mean_time, Some(12.0));
    // population variance of {10, 14}
    assert_eq!(cell.variance_time, Some(4.0));
    assert_eq!(cell.failures.get("Stuck"), Some(&1));
    assert_eq!(cell.summary(), "2 (12.0±4.0)");

    let none = Cell::from_results(&[&rs[1]]);
    assert_eq!((none.mean_time, none.summary()), (None, "0 (-)".to_string()));
}

#[test]
fn cross_deploy_rows() {
    let cfg = BenchConfig { difficulties: vec![Difficulty::Easy], ..small() };
    let course = CourseSpec::new(Difficulty::Easy, 40);
    let map = Arc::new(generate_course(&course).unwrap());
    let demos: Vec<_> = [Direction::Forward, Direction::Reverse]
        .into_iter()
        .map(|dir| {
            let spec = DemoSpec { max_ticks: 40, depth_size: 32, ..DemoSpec::new(course, VehicleKind::V6W, dir) };
            demos::record_scripted(&spec, map.clone(), None).unwrap()
        })
        .collect();
    let train = TrainConfig { epochs: 2, ..TrainConfig::default() };

    let own = bench::cross_deploy(VehicleKind::V6W, VehicleKind::V6W, &demos, 2, &train, &cfg).unwrap();
    assert_eq!(own.label, "BC6");
    assert_eq!(own.own, own.cross);

    // the degenerate cross equals a plain evaluation of the same policy
    let mut samples = Vec::new();
    for d in &demos {
        samples.extend(d.samples(2).unwrap());
    }
    let params = verti_core::bclearn::train(&samples, &train).unwrap().params;
    let plain = [Policy::Learned { label: "BC6".into(), params: Arc::new(params) }];
    let (cells, _) = bench::run_grid(&cfg, &plain, &[VehicleKind::V6W]).unwrap();
    assert_eq!(cells, own.own);

    let cross = bench::cross_deploy(VehicleKind::V6W, VehicleKind::V4W, &demos, 2, &train, &cfg).unwrap();
    assert_eq!(cross.own, own.own);
    assert!(cross.cross.iter().all(|c| c.vehicle == VehicleKind::V4W && c.controller == "BC6"));
    let again = bench::cross_deploy(VehicleKind::V6W, VehicleKind::V4W, &demos, 2, &train, &cfg).unwrap();
    assert_eq!(cross, again);

    assert!(bench::cross_deploy(VehicleKind::V4W, VehicleKind::V6W, &demos, 2, &train, &cfg).is_err());
}

#[test]
fn config_validation_and_toml() {
    assert!(BenchConfig { trials: 0, ..BenchConfig::default() }.validate().is_err());
    assert!(BenchConfig { depth_size: 16, ..BenchConfig::default() }.validate().is_err());
    assert!(BenchConfig { depth_size: 16, bc: BcMode::None, ..BenchConfig::default() }.validate().is_ok());
    assert!(BenchConfig { timeout: 61.0, ..BenchConfig::default() }.validate().is_err());

    let cfg: BenchConfig = toml::from_str("base_seed = 4\ntrials = 6\ndifficulties = [\"Easy\"]\nbc = \"bias\"\n").unwrap();
    assert_eq!((cfg.base_seed, cfg.trials, cfg.bc.clone()), (4, 6, BcMode::Bias));
    assert_eq!(cfg.vehicles, BenchConfig::default().vehicles);
    assert_eq!((0..6).filter(|i| cfg.direction(*i) == Direction::Forward).count(), 3);
}

#[test]
fn hardware_reference_table() {
    assert_eq!(reference::HARDWARE_RESULTS.len(), 24);
    let c = reference::hardware_cell(VehicleKind::V6W, Difficulty::Easy, "BC4").unwrap();
    assert_eq!((c.successes, c.mean_time, c.variance), (10, 11.6, 1.9));
    let c = reference::hardware_cell(VehicleKind::V4W, Difficulty::Difficult, "OL").unwrap();
    assert_eq!((c.successes, c.mean_time, c.variance), (3, 19.7, 29.4));
    assert!(reference::hardware_table().contains("not reproducible"));
}
