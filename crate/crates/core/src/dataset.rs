//! On-disk demonstration format.
//!
//! A trial directory holds `manifest.txt` (key=value), `records.txt` (one
//! whitespace-separated line per frame) and `depth/NNNNNN.pgm` (16-bit
//! millimeter depth, zero-padded frame index). Record fields, in order:
//! `t depth_ref w0 w1 w2 w3 dx dy z flag_speed flag_z d_front d_rear s v omega`.
//! Reals are written with 9 significant digits; booleans as 0/1.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bclearn::{self, Sample};
use crate::controllers::Observation;
use crate::pgm::{self, Gray16};
use crate::terrain::Difficulty;
use crate::vehicle::{Action, DepthImage, GroundSpeed, VehicleKind, CAMERA_FOV};

pub const FORMAT_VERSION: u32 = 1;
pub const TICK_HZ: u32 = 20;
const FIELDS: usize = 16;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("format version {found} is not supported (expected {FORMAT_VERSION})")]
    VersionMismatch { found: String },
    #[error("manifest declares {declared} frames but records.txt has {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("record {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("record {line}: field {field} is not finite")]
    NonFinite { line: usize, field: &'static str },
    #[error("frame {index}: time {t} does not increase")]
    NonMonotonicTime { index: usize, t: f64 },
    #[error("frame {index}: depth file {path} is missing")]
    MissingDepth { index: usize, path: String },
    #[error("frame {index}: bad depth image: {reason}")]
    BadDepth { index: usize, reason: String },
    #[error("observation has no depth image")]
    NoDepthInObservation,
    #[error("recording session is closed")]
    Closed,
    #[error("empty demonstration")]
    Empty,
}

/// One timestamped observation/action record.
#[derive(Debug, Clone, PartialEq)]
pub struct DataFrame {
    pub t: f64,
    pub depth_ref: String,
    pub w: [f64; 4],
    pub g: GroundSpeed,
    pub d: (bool, bool),
    pub s: bool,
    pub v: f64,
    pub omega: f64,
}

fn real(x: f64) -> String {
    format!("{x:.8e}")
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// The value a real takes after being written and read back.
pub fn quantize(x: f64) -> f64 {
    real(x).parse().expect("formatted real parses")
}

impl DataFrame {
    pub fn from_parts(t: f64, depth_ref: String, obs: &Observation, act: &Action) -> Self {
        Self {
            t,
            depth_ref,
            w: obs.w,
            g: obs.g,
            d: act.d,
            s: act.s,
            v: act.v,
            omega: act.omega,
        }
    }

    /// Every real rounded to its stored precision.
    pub fn quantized(&self) -> Self {
        Self {
            t: quantize(self.t),
            depth_ref: self.depth_ref.clone(),
            w: self.w.map(quantize),
            g: GroundSpeed {
                dx: quantize(self.g.dx),
                dy: quantize(self.g.dy),
                z_clearance: quantize(self.g.z_clearance),
                ..self.g
            },
            v: quantize(self.v),
            omega: quantize(self.omega),
            ..*self
        }
    }

    pub fn to_line(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{} {}", real(self.t), self.depth_ref);
        for w in self.w {
            let _ = write!(out, " {}", real(w));
        }
        let _ = write!(
            out,
            " {} {} {} {} {} {} {} {} {} {}",
            real(self.g.dx),
            real(self.g.dy),
            real(self.g.z_clearance),
            flag(self.g.flag_speed),
            flag(self.g.flag_z),
            flag(self.d.0),
            flag(self.d.1),
            flag(self.s),
            real(self.v),
            real(self.omega)
        );
        out
    }

    pub fn parse_line(line: &str, lineno: usize) -> Result<Self, DatasetError> {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != FIELDS {
            return Err(DatasetError::MalformedRecord {
                line: lineno,
                reason: format!("expected {FIELDS} fields, found {}", parts.len()),
            });
        }
        const NAMES: [&str; FIELDS] = [
            "t", "depth_ref", "w0", "w1", "w2", "w3", "dx", "dy", "z", "flag_speed", "flag_z", "d_front",
            "d_rear", "s", "v", "omega",
        ];
        let num = |i: usize| -> Result<f64, DatasetError> {
            let v: f64 = parts[i].parse().map_err(|_| DatasetError::MalformedRecord {
                line: lineno,
                reason: format!("{} is not a number: {:?}", NAMES[i], parts[i]),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::NonFinite { line: lineno, field: NAMES[i] });
            }
            Ok(v)
        };
        let bit = |i: usize| -> Result<bool, DatasetError> {
            match parts[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(DatasetError::MalformedRecord {
                    line: lineno,
                    reason: format!("{} must be 0 or 1, found {other:?}", NAMES[i]),
                }),
            }
        };
        Ok(Self {
            t: num(0)?,
            depth_ref: parts[1].to_string(),
            w: [num(2)?, num(3)?, num(4)?, num(5)?],
            g: GroundSpeed { dx: num(6)?, dy: num(7)?, z_clearance: num(8)?, flag_speed: bit(9)?, flag_z: bit(10)? },
            d: (bit(11)?, bit(12)?),
            s: bit(13)?,
            v: num(14)?,
            omega: num(15)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub format_version: u32,
    pub vehicle: VehicleKind,
    pub tick_hz: u32,
    pub frame_count: usize,
    pub course_seed: Option<u64>,
    pub course_difficulty: Option<Difficulty>,
    pub trial_id: String,
    pub rgb_present: bool,
}

impl Manifest {
    pub fn new(vehicle: VehicleKind, trial_id: impl Into<String>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            vehicle,
            tick_hz: TICK_HZ,
            frame_count: 0,
            course_seed: None,
            course_difficulty: None,
            trial_id: trial_id.into(),
            rgb_present: false,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "format_version={}\nvehicle={}\ntick_hz={}\nframe_count={}\n",
            self.format_version, self.vehicle, self.tick_hz, self.frame_count
        );
        if let Some(seed) = self.course_seed {
            let _ = writeln!(s, "course_seed={seed}");
        }
        if let Some(d) = self.course_difficulty {
            let _ = writeln!(s, "course_difficulty={d}");
        }
        let _ = writeln!(s, "trial_id={}", self.trial_id);
        let _ = writeln!(s, "rgb_present={}", self.rgb_present);
        s
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut kv = std::collections::BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DatasetError::Manifest(format!("bad line {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| DatasetError::Manifest(format!("missing key {k}")));
        let bad = |k: &str, v: &str| DatasetError::Manifest(format!("bad value for {k}: {v:?}"));
        let version = get("format_version")?;
        if version != &FORMAT_VERSION.to_string() {
            return Err(DatasetError::VersionMismatch { found: version.clone() });
        }
        let vehicle = get("vehicle")?;
        let tick = get("tick_hz")?;
        let count = get("frame_count")?;
        let rgb = get("rgb_present")?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            vehicle: vehicle.parse().map_err(|_| bad("vehicle", vehicle))?,
            tick_hz: tick.parse().map_err(|_| bad("tick_hz", tick))?,
            frame_count: count.parse().map_err(|_| bad("frame_count", count))?,
            course_seed: kv.get("course_seed").map(|v| v.parse().map_err(|_| bad("course_seed", v))).transpose()?,
            course_difficulty: kv
                .get("course_difficulty")
                .map(|v| v.parse().map_err(|_| bad("course_difficulty", v)))
                .transpose()?,
            trial_id: get("trial_id")?.clone(),
            rgb_present: rgb.parse().map_err(|_| bad("rgb_present", rgb))?,
        })
    }
}

pub fn depth_ref(index: usize) -> String {
    format!("depth/{index:06}.pgm")
}

/// Quantize a depth image to whole millimeters.
pub fn depth_to_pgm(depth: &DepthImage) -> Gray16 {
    Gray16 {
        width: depth.width,
        height: depth.height,
        data: depth.data.iter().map(|d| pgm::meters_to_mm(*d)).collect(),
    }
}

pub fn depth_from_pgm(img: &Gray16) -> DepthImage {
    DepthImage {
        width: img.width,
        height: img.height,
        fov: CAMERA_FOV,
        data: img.data.iter().map(|mm| pgm::mm_to_meters(*mm)).collect(),
    }
}

/// A loaded trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub manifest: Manifest,
    pub frames: Vec<DataFrame>,
    pub depth: Vec<DepthImage>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Observation seen at frame `i`.
    pub fn observation(&self, i: usize) -> Observation {
        let f = &self.frames[i];
        Observation { depth: self.depth.get(i).cloned(), w: f.w, g: f.g, t: f.t }
    }

    /// Supervised (image, action) pairs for behavior cloning, every
    /// `stride`-th frame.
    pub fn samples(&self, stride: usize) -> Result<Vec<Sample>, DatasetError> {
        self.frames
            .iter()
            .zip(&self.depth)
            .enumerate()
            .step_by(stride.max(1))
            .map(|(i, (f, d))| {
                let x = bclearn::preprocess(d).map_err(|e| DatasetError::BadDepth { index: i, reason: e.to_string() })?;
                Ok(Sample { x, a: [f.v, f.omega] })
            })
            .collect()
    }
}

/// Writes one trial directory. Frames are buffered until [`finish`](Self::finish).
pub struct Recorder {
    dir: PathBuf,
    manifest: Manifest,
    records: Option<BufWriter<File>>,
    last_t: Option<f64>,
}

impl Recorder {
    pub fn create(dir: &Path, manifest: Manifest) -> Result<Self, DatasetError> {
        fs::create_dir_all(dir.join("depth"))?;
        let records = BufWriter::new(File::create(dir.join("records.txt"))?);
        Ok(Self { dir: dir.to_path_buf(), manifest: Manifest { frame_count: 0, ..manifest }, records: Some(records), last_t: None })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn frame_count(&self) -> usize {
        self.manifest.frame_count
    }

    /// Append one frame and return it as it will read back from disk.
    pub fn record_frame(&mut self, obs: &Observation, act: &Action) -> Result<DataFrame, DatasetError> {
        let depth = obs.depth.as_ref().ok_or(DatasetError::NoDepthInObservation)?;
        let index = self.manifest.frame_count;
        if self.last_t.is_some_and(|last| obs.t <= last) {
            return Err(DatasetError::NonMonotonicTime { index, t: obs.t });
        }
        let records = self.records.as_mut().ok_or(DatasetError::Closed)?;
        let rel = depth_ref(index);
        fs::write(self.dir.join(&rel), pgm::encode(&depth_to_pgm(depth)))?;
        let frame = DataFrame::from_parts(obs.t, rel, obs, act).quantized();
        writeln!(records, "{}", frame.to_line())?;
        self.manifest.frame_count += 1;
        self.last_t = Some(obs.t);
        Ok(frame)
    }

    /// Flush records and write the manifest.
    pub fn finish(mut self) -> Result<Manifest, DatasetError> {
        if let Some(mut w) = self.records.take() {
            w.flush()?;
        }
        fs::write(self.dir.join("manifest.txt"), self.manifest.to_text())?;
        Ok(self.manifest)
    }
}

/// Read and validate a trial directory.
pub fn load(dir: &Path) -> Result<Demonstration, DatasetError> {
    let manifest = Manifest::parse(&fs::read_to_string(dir.join("manifest.txt"))?)?;
    let text = fs::read_to_string(dir.join("records.txt"))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != manifest.frame_count {
        return Err(DatasetError::CountMismatch { declared: manifest.frame_count, found: lines.len() });
    }
    let mut frames = Vec::with_capacity(lines.len());
    let mut depth = Vec::with_capacity(lines.len());
    let mut last_t: Option<f64> = None;
    for (i, line) in lines.iter().enumerate() {
        let frame = DataFrame::parse_line(line, i + 1)?;
        if last_t.is_some_and(|t| frame.t <= t) {
            return Err(DatasetError::NonMonotonicTime { index: i, t: frame.t });
        }
        last_t = Some(frame.t);
        let path = dir.join(&frame.depth_ref);
        let bytes = fs::read(&path).map_err(|_| DatasetError::MissingDepth { index: i, path: frame.depth_ref.clone() })?;
        let img = pgm::decode(&bytes).map_err(|e| DatasetError::BadDepth { index: i, reason: e.to_string() })?;
        if img.width != img.height || img.width < 8 {
            return Err(DatasetError::BadDepth { index: i, reason: format!("unexpected size {}x{}", img.width, img.height) });
        }
        depth.push(depth_from_pgm(&img));
        frames.push(frame);
    }
    Ok(Demonstration { manifest, frames, depth })
}

/// Validate without keeping the data.
pub fn validate(dir: &Path) -> Result<Manifest, DatasetError> {
    load(dir).map(|d| d.manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize, values: impl Iterator<Item = f64>) -> Self {
        let mut counts = vec![0; bins];
        for v in values {
            let k = (((v - lo) / (hi - lo)) * bins as f64).floor();
            counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn occupied_bins(&self) -> usize {
        self.counts.iter().filter(|c| **c > 0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub frame_count: usize,
    pub duration: f64,
    pub speed: Histogram,
    pub steering: Histogram,
    /// (field, min, max) for every numeric field.
    pub ranges: Vec<(&'static str, f64, f64)>,
}

pub fn stats(demo: &Demonstration) -> Result<Summary, DatasetError> {
    if demo.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = demo.len();
    let f = &demo.frames;
    let range = |name: &'static str, get: &dyn Fn(&DataFrame) -> f64| {
        let (lo, hi) = f.iter().map(get).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        (name, lo, hi)
    };
    let ranges = vec![
        range("t", &|x| x.t),
        range("w0", &|x| x.w[0]),
        range("w1", &|x| x.w[1]),
        range("w2", &|x| x.w[2]),
        range("w3", &|x| x.w[3]),
        range("dx", &|x| x.g.dx),
        range("dy", &|x| x.g.dy),
        range("z", &|x| x.g.z_clearance),
        range("v", &|x| x.v),
        range("omega", &|x| x.omega),
    ];
    Ok(Summary {
        frame_count: n,
        duration: (n - 1) as f64 / f64::from(demo.manifest.tick_hz),
        speed: Histogram::new(-Action::V_MAX, Action::V_MAX, 20, f.iter().map(|x| x.v)),
        steering: Histogram::new(-Action::OMEGA_MAX, Action::OMEGA_MAX, 14, f.iter().map(|x| x.omega)),
        ranges,
    })
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "frames: {}", self.frame_count)?;
        writeln!(f, "duration: {:.2} s", self.duration)?;
        for (name, h) in [("v", &self.speed), ("omega", &self.steering)] {
            let width = (h.hi - h.lo) / h.counts.len() as f64;
            writeln!(f, "{name} histogram:")?;
            for (i, c) in h.counts.iter().enumerate().filter(|(_, c)| **c > 0) {
                let lo = h.lo + i as f64 * width;
                writeln!(f, "  [{:+.3}, {:+.3}) {}", lo, lo + width, c)?;
            }
        }
        writeln!(f, "ranges:")?;
        for (name, lo, hi) in &self.ranges {
            writeln!(f, "  {name:<6} {lo:+.4} .. {hi:+.4}")?;
        }
        Ok(())
    }
}
