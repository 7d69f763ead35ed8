//! The 3×3 grid of fitness coefficients and the rule that picks one cell.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fitness::FitnessConfig;

/// Candidate exponential bases.
pub const BASES: [f64; 3] = [1.5, core::f64::consts::E, 10.0];

/// Candidate values of `c · ε_th`.
pub const SCALED_EXPONENTS: [f64; 3] = [0.5, 1.0, 5.0];

/// Relative slack above the threshold that a cell's mean control error may have and still
/// count as acceptable.
pub const DEFAULT_TOLERANCE: f64 = 0.10;

/// Fitness configurations for every cell, row-major over `c` then `b`.
pub fn grid(threshold: f64) -> Vec<FitnessConfig> {
    SCALED_EXPONENTS
        .iter()
        .flat_map(|&k| {
            BASES.iter().map(move |&base| FitnessConfig {
                base,
                exponent_scale: k / threshold,
                control_error_threshold: threshold,
            })
        })
        .collect()
}

/// Archive means measured for one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneCell {
    pub base: f64,
    pub exponent_scale: f64,
    pub mean_control_error: f64,
    pub mean_mr_falsification: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    /// False when no cell was acceptable and the closest one to the threshold was taken.
    pub within_tolerance: bool,
}

/// Highest mean MR-falsification among cells whose mean control error is at most
/// `(1 + tolerance) · threshold`; otherwise the cell whose control error is closest to the
/// threshold. Cells with non-finite means are never picked. `None` if none are usable.
pub fn select(cells: &[TuneCell], threshold: f64, tolerance: f64) -> Option<Selection> {
    let usable =
        |c: &&TuneCell| c.mean_control_error.is_finite() && c.mean_mr_falsification.is_finite();
    let limit = threshold * (1.0 + tolerance);
    let best = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| usable(c) && c.mean_control_error <= limit)
        .max_by(|a, b| a.1.mean_mr_falsification.total_cmp(&b.1.mean_mr_falsification));
    if let Some((index, _)) = best {
        return Some(Selection { index, within_tolerance: true });
    }
    cells
        .iter()
        .enumerate()
        .filter(|(_, c)| usable(c))
        .min_by(|a, b| {
            let da = (a.1.mean_control_error - threshold).abs();
            let db = (b.1.mean_control_error - threshold).abs();
            da.total_cmp(&db)
        })
        .map(|(index, _)| Selection { index, within_tolerance: false })
}
