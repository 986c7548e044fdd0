//! Published results of the physical testbed, kept as reference metadata.
//!
//! These numbers come from real vehicles driven on a real rock course with
//! human demonstrations. The simulator does not and cannot reproduce them;
//! they are listed only so simulated grids can be read next to them.

use std::fmt::Write as _;

use verti_core::terrain::Difficulty;
use verti_core::vehicle::VehicleKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardwareCell {
    pub vehicle: VehicleKind,
    pub difficulty: Difficulty,
    pub controller: &'static str,
    /// Successful trials out of 10.
    pub successes: u32,
    /// Mean traversal time of successful trials, seconds.
    pub mean_time: f64,
    /// Variance of successful traversal times.
    pub variance: f64,
}

const fn cell(
    vehicle: VehicleKind,
    difficulty: Difficulty,
    controller: &'static str,
    successes: u32,
    mean_time: f64,
    variance: f64,
) -> HardwareCell {
    HardwareCell { vehicle, difficulty, controller, successes, mean_time, variance }
}

use Difficulty::{Difficult, Easy, Medium};
use VehicleKind::{V4W, V6W};

pub const HARDWARE_TRIALS: u32 = 10;

pub const HARDWARE_RESULTS: [HardwareCell; 24] = [
    cell(V6W, Easy, "OL", 5, 20.7, 1.7),
    cell(V6W, Easy, "RB", 8, 19.2, 3.9),
    cell(V6W, Easy, "BC6", 9, 13.8, 8.2),
    cell(V6W, Easy, "BC4", 10, 11.6, 1.9),
    cell(V4W, Easy, "OL", 6, 17.7, 3.8),
    cell(V4W, Easy, "RB", 6, 13.4, 2.5),
    cell(V4W, Easy, "BC6", 7, 17.2, 6.7),
    cell(V4W, Easy, "BC4", 9, 14.1, 7.7),
    cell(V6W, Medium, "OL", 6, 15.4, 0.9),
    cell(V6W, Medium, "RB", 9, 14.8, 2.2),
    cell(V6W, Medium, "BC6", 9, 14.6, 11.2),
    cell(V6W, Medium, "BC4", 10, 13.6, 2.3),
    cell(V4W, Medium, "OL", 4, 15.6, 14.2),
    cell(V4W, Medium, "RB", 6, 12.9, 1.8),
    cell(V4W, Medium, "BC6", 3, 19.2, 10.6),
    cell(V4W, Medium, "BC4", 8, 13.7, 1.6),
    cell(V6W, Difficult, "OL", 3, 24.1, 2.6),
    cell(V6W, Difficult, "RB", 6, 14.3, 1.9),
    cell(V6W, Difficult, "BC6", 6, 15.7, 18.5),
    cell(V6W, Difficult, "BC4", 9, 14.9, 2.9),
    cell(V4W, Difficult, "OL", 3, 19.7, 29.4),
    cell(V4W, Difficult, "RB", 5, 16.8, 20.5),
    cell(V4W, Difficult, "BC6", 3, 23.3, 43.4),
    cell(V4W, Difficult, "BC4", 7, 14.9, 8.2),
];

pub fn hardware_cell(vehicle: VehicleKind, difficulty: Difficulty, controller: &str) -> Option<&'static HardwareCell> {
    HARDWARE_RESULTS
        .iter()
        .find(|c| c.vehicle == vehicle && c.difficulty == difficulty && c.controller == controller)
}

/// The hardware grid in the same layout as the simulated report.
pub fn hardware_table() -> String {
    let controllers = ["OL", "RB", "BC6", "BC4"];
    let mut s = String::from("physical testbed reference (real hardware; not reproducible in simulation)\n");
    let _ = writeln!(s, "successful trials out of {HARDWARE_TRIALS} (mean ± variance of successful traversal times, s)\n");
    let _ = write!(s, "{:<10}", "");
    for v in [V6W, V4W] {
        let _ = write!(s, " | {:<64}", v.name());
    }
    let _ = writeln!(s);
    for d in [Easy, Medium, Difficult] {
        let _ = write!(s, "{:<10}", d.name());
        for v in [V6W, V4W] {
            let _ = write!(s, " | ");
            for c in controllers {
                let h = hardware_cell(v, d, c).expect("complete grid");
                let _ = write!(s, "{:<16}", format!("{} ({:.1}±{:.1})", h.successes, h.mean_time, h.variance));
            }
        }
        let _ = writeln!(s);
    }
    s
}
