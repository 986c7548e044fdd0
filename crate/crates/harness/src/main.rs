use std::fs;
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use verti_core::appld::{self, AppldConfig};
use verti_core::bclearn::{self, BcParams, BcPolicy, TrainConfig};
use verti_core::controllers::{Controller, OpenLoop, RbParams, RuleBased};
use verti_core::dataset;
use verti_core::terrain::{generate_course, CourseSpec, Difficulty};
use verti_core::vehicle::VehicleKind;
use verti_harness::bench::{self, BenchConfig};
use verti_harness::demos::{self, DemoSpec};
use verti_harness::trial::{self, Direction, TrialSpec};
use verti_harness::{reference, serve, HarnessError};

#[derive(Parser)]
#[command(name = "verti", version, about = "Wheeled-vehicle rock-crawling simulator and benchmark")]
struct Cli {
    /// Seed for course generation, jitter, initialization and fitting.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ctl {
    Ol,
    Rb,
    Bc,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dir {
    Forward,
    Reverse,
}

impl From<Dir> for Direction {
    fn from(d: Dir) -> Self {
        match d {
            Dir::Forward => Direction::Forward,
            Dir::Reverse => Direction::Reverse,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a course heightmap (PGM in millimeters plus a sidecar).
    GenCourse {
        #[arg(long, default_value = "medium")]
        difficulty: Difficulty,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one trial and print the result as JSON.
    RunTrial {
        #[arg(long, value_enum)]
        controller: Ctl,
        #[arg(long, default_value = "V6W")]
        vehicle: VehicleKind,
        #[arg(long, default_value = "medium")]
        difficulty: Difficulty,
        #[arg(long, value_enum, default_value = "forward")]
        direction: Dir,
        #[arg(long, default_value_t = trial::TIMEOUT_S)]
        timeout: f64,
        #[arg(long, default_value_t = verti_core::sim::DEFAULT_DEPTH_SIZE)]
        depth_size: usize,
        /// Rule-based parameters (TOML).
        #[arg(long)]
        rb_params: Option<PathBuf>,
        /// Learned policy parameters; required for `bc`.
        #[arg(long)]
        bc_params: Option<PathBuf>,
    },
    /// Run the benchmark grid and write the reports.
    Bench {
        /// Benchmark configuration (TOML); keys default individually.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Flat-course smoke configuration.
        #[arg(long)]
        smoke: bool,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        depth_size: Option<usize>,
        #[arg(long, default_value = "bench-out")]
        out_dir: PathBuf,
        /// Also print the physical-testbed reference numbers.
        #[arg(long)]
        with_reference: bool,
    },
    /// Record a headless demonstration driven by the rule-based controller.
    Record {
        #[arg(long, default_value = "V6W")]
        vehicle: VehicleKind,
        #[arg(long, default_value = "medium")]
        difficulty: Difficulty,
        #[arg(long, value_enum, default_value = "forward")]
        direction: Dir,
        #[arg(long, default_value_t = 600)]
        max_ticks: usize,
        #[arg(long, default_value_t = verti_core::sim::DEFAULT_DEPTH_SIZE)]
        depth_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a learned policy on recorded demonstrations.
    TrainBc {
        /// Demonstration directories.
        #[arg(required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = TrainConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
        lr: f64,
        #[arg(long, default_value_t = TrainConfig::default().batch_size)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Segment a demonstration, fit one parameter set per segment and train
    /// the context classifier.
    AppldFit {
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Serve an interactive session for an operator client.
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value = "V6W")]
        vehicle: VehicleKind,
        #[arg(long, default_value = "medium")]
        difficulty: Difficulty,
        #[arg(long, default_value_t = verti_core::sim::DEFAULT_DEPTH_SIZE)]
        depth_size: usize,
        #[arg(long, default_value = "recordings")]
        record_root: PathBuf,
    },
    /// Check a demonstration directory.
    DatasetValidate { data: PathBuf },
    /// Summarize a demonstration directory.
    DatasetStats { data: PathBuf },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let seed = cli.seed;
    match cli.command {
        Command::GenCourse { difficulty, out } => {
            let map = generate_course(&CourseSpec::new(difficulty, seed))?;
            map.save(&out)?;
            println!("{} x {} cells, max height {:.3} m -> {}", map.length_cells, map.width_cells, map.max_height(), out.display());
        }
        Command::RunTrial { controller, vehicle, difficulty, direction, timeout, depth_size, rb_params, bc_params } => {
            let course = CourseSpec::new(difficulty, seed);
            let map = Arc::new(generate_course(&course)?);
            let mut ctl: Box<dyn Controller> = match controller {
                Ctl::Ol => Box::new(OpenLoop),
                Ctl::Rb => Box::new(RuleBased::new(rb_params.map(|p| RbParams::load(&p)).transpose()?.unwrap_or_default())),
                Ctl::Bc => {
                    let path = bc_params.ok_or_else(|| HarnessError::Config("--bc-params is required for bc".into()))?;
                    Box::new(BcPolicy::new("BC", BcParams::load(&path)?))
                }
            };
            let spec = TrialSpec { timeout, depth_size, ..TrialSpec::new(course, vehicle, direction.into(), seed) };
            let result = trial::run_trial(ctl.as_mut(), map, &spec)?;
            println!("{}", serde_json::to_string_pretty(&result).map_err(|e| HarnessError::Config(e.to_string()))?);
        }
        Command::Bench { config, smoke, trials, depth_size, out_dir, with_reference } => {
            let mut cfg = match (config, smoke) {
                (Some(path), _) => toml::from_str(&fs::read_to_string(&path)?)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?,
                (None, true) => BenchConfig::smoke(seed),
                (None, false) => BenchConfig { base_seed: seed, ..BenchConfig::default() },
            };
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(d) = depth_size {
                cfg.depth_size = d;
            }
            let table = bench::run_benchmark(&cfg)?;
            fs::create_dir_all(&out_dir)?;
            fs::write(out_dir.join("report.txt"), table.report_text())?;
            fs::write(out_dir.join("report.csv"), table.report_csv())?;
            fs::write(out_dir.join("trials.csv"), table.trials_csv())?;
            print!("{}", table.report_text());
            if with_reference {
                println!();
                print!("{}", reference::hardware_table());
            }
        }
        Command::Record { vehicle, difficulty, direction, max_ticks, depth_size, out } => {
            let course = CourseSpec::new(difficulty, seed);
            let map = Arc::new(generate_course(&course)?);
            let spec = DemoSpec { max_ticks, depth_size, ..DemoSpec::new(course, vehicle, direction.into()) };
            let demo = demos::record_scripted(&spec, map, Some(&out))?;
            println!("{} frames -> {}", demo.len(), out.display());
        }
        Command::TrainBc { data, out, epochs, lr, batch, stride } => {
            let mut samples = Vec::new();
            for dir in &data {
                samples.extend(dataset::load(dir)?.samples(stride)?);
            }
            let cfg = TrainConfig { epochs, learning_rate: lr, batch_size: batch, seed, ..TrainConfig::default() };
            let outcome = bclearn::train(&samples, &cfg)?;
            outcome.params.save(&out)?;
            let first = outcome.losses.first().copied().unwrap_or(f64::NAN);
            let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
            println!("{} samples, loss {first:.6} -> {last:.6}, saved {}", samples.len(), out.display());
        }
        Command::AppldFit { data, out_dir, budget } => {
            let demo = dataset::load(&data)?;
            let mut cfg = AppldConfig { seed, ..AppldConfig::default() };
            if let Some(b) = budget {
                cfg.budget = b;
            }
            let fit = appld::fit_demonstration(&demo, &cfg)?;
            fs::create_dir_all(&out_dir)?;
            fit.library.save(&out_dir.join("library.toml"))?;
            fit.model.save(&out_dir.join("context.model"))?;
            println!("changepoints {:?}", fit.changepoints.bounds());
            for (k, l) in fit.segment_losses.iter().enumerate() {
                println!("segment {k}: loss {l:.6e}");
            }
        }
        Command::Serve { port, host, vehicle, difficulty, depth_size, record_root } => {
            let course = CourseSpec::new(difficulty, seed);
            let map = Arc::new(generate_course(&course)?);
            let listener = TcpListener::bind((host.as_str(), port))?;
            println!("serving {vehicle} on {difficulty} course {seed} at {}", listener.local_addr()?);
            let cfg = serve::ServeConfig { depth_size, ..serve::ServeConfig::new(course, vehicle, record_root) };
            serve::run(listener, map, cfg, &AtomicBool::new(false))?;
        }
        Command::DatasetValidate { data } => {
            let m = dataset::validate(&data)?;
            println!("ok: {} frames, vehicle {}, trial {}", m.frame_count, m.vehicle, m.trial_id);
        }
        Command::DatasetStats { data } => {
            let demo = dataset::load(&data)?;
            println!("{:#?}", dataset::stats(&demo)?);
        }
    }
    Ok(())
}
