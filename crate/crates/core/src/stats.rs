//! Statistics used to compare search and baseline runs.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::EvalRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("sample {0} is empty")]
    EmptySample(&'static str),
    #[error("sample contains NaN")]
    NotANumber,
}

/// Mann-Whitney U test result; `u` is from the first sample's perspective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    pub u: f64,
    pub u_other: f64,
    pub z: f64,
    /// Two-sided p-value, never exactly zero.
    pub p: f64,
}

/// Mid-ranks (1-based) of `values` and the tie correction term `Σ (t³ - t)`.
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j share the average of ranks i+1..=j.
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

/// Two-sided Mann-Whitney U test with mid-ranks, tie-corrected variance and a continuity
/// correction on the normal approximation.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitney, StatsError> {
    if x.is_empty() {
        return Err(StatsError::EmptySample("x"));
    }
    if y.is_empty() {
        return Err(StatsError::EmptySample("y"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(StatsError::NotANumber);
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum_x: f64 = ranks[..x.len()].iter().sum();
    let u = rank_sum_x - n1 * (n1 + 1.0) / 2.0;
    let u_other = n1 * n2 - u;

    let n = n1 + n2;
    let variance = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let mean = n1 * n2 / 2.0;
    if variance.is_nan() || variance <= 0.0 {
        return Ok(MannWhitney { u, u_other, z: 0.0, p: 1.0 });
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / libm::sqrt(variance);
    let p = libm::erfc(z / core::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(MannWhitney { u, u_other, z: if u < mean { -z } else { z }, p })
}

/// Coefficient of determination of an ordinary least-squares fit of `y` on `x`.
///
/// `None` with fewer than three points or when `x` has no variance. A constant `y` gives 0.
pub fn r_squared(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx.is_nan() || sxx <= 0.0 {
        return None;
    }
    if syy == 0.0 {
        return Some(0.0);
    }
    // 1 - SS_res / SS_tot with SS_res = Syy - Sxy² / Sxx.
    let ss_res = (syy - sxy * sxy / sxx).max(0.0);
    Some((1.0 - ss_res / syy).clamp(0.0, 1.0))
}

/// R² of MR-falsification on control error over the tests below the control-error threshold.
pub fn r_squared_below_threshold(points: &[EvalPoint], threshold: f64) -> Option<f64> {
    let filtered: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| !p.diverged && p.control_error < threshold)
        .map(|p| (p.control_error, p.mr_falsification))
        .collect();
    r_squared(&filtered)
}

/// Fixed-width histogram over `[lo, hi]`; the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    /// Values above `hi` folded into the last bin (only when clipping).
    pub clipped: usize,
    /// Non-finite values left out.
    pub skipped: usize,
}

impl Histogram {
    /// Bins finite `values`. With `clip = Some(max)` the range is `[0, max]` and larger values
    /// are counted in the right-most bin.
    pub fn build(values: &[f64], bins: usize, clip: Option<f64>) -> Self {
        let bins = bins.max(1);
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let skipped = values.len() - finite.len();
        let (lo, hi) = match clip {
            Some(max) => (0.0_f64.min(finite.iter().copied().fold(0.0, f64::min)), max),
            None => (
                finite.iter().copied().fold(f64::INFINITY, f64::min),
                finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
        };
        let mut counts = alloc::vec![0; bins];
        let mut clipped = 0;
        if finite.is_empty() {
            return Self { lo: 0.0, hi: 0.0, counts, clipped, skipped };
        }
        let width = (hi - lo) / bins as f64;
        for v in finite {
            if v > hi {
                clipped += 1;
            }
            let idx = if width > 0.0 { libm::floor((v - lo) / width) as isize } else { 0 };
            counts[idx.clamp(0, bins as isize - 1) as usize] += 1;
        }
        Self { lo, hi, counts, clipped, skipped }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Lower edge of each bin.
    pub fn edges(&self) -> Vec<f64> {
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        (0..self.counts.len()).map(|i| self.lo + width * i as f64).collect()
    }
}

/// The per-test numbers the analysis needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub fitness: f64,
    pub mr_falsification: f64,
    pub control_error: f64,
    pub diverged: bool,
}

impl From<&EvalRecord> for EvalPoint {
    fn from(r: &EvalRecord) -> Self {
        Self {
            fitness: r.fitness,
            mr_falsification: r.mr_falsification,
            control_error: r.control_error,
            diverged: r.diverged,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean and sample standard deviation; `std_dev` is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let (mean, std_dev) = mean_std(&finite);
        Self {
            count: finite.len(),
            mean,
            std_dev,
            min: finite.iter().copied().fold(f64::INFINITY, f64::min),
            max: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Options for [`summarize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub bins: usize,
    pub control_error_threshold: f64,
    /// Clip the control-error and MR-falsification histograms to `[0, clip]`.
    pub clip: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub count: usize,
    pub diverged: usize,
    pub fitness: MetricSummary,
    pub mr_falsification: MetricSummary,
    pub control_error: MetricSummary,
    /// Tests at or above the control-error threshold.
    pub trivial_failures: usize,
    pub below_threshold: usize,
    pub r_squared_below_threshold: Option<f64>,
    pub fitness_histogram: Histogram,
    pub mr_falsification_histogram: Histogram,
    pub control_error_histogram: Histogram,
    pub archive_distance_histogram: Option<Histogram>,
}

pub fn summarize(
    points: &[EvalPoint],
    archive_distances: Option<&[f64]>,
    opts: &ReportOptions,
) -> AnalysisReport {
    let column = |f: fn(&EvalPoint) -> f64| -> Vec<f64> {
        points.iter().filter(|p| !p.diverged).map(f).collect()
    };
    let fitness: Vec<f64> = points.iter().map(|p| p.fitness).collect();
    let mr = column(|p| p.mr_falsification);
    let ce = column(|p| p.control_error);
    let th = opts.control_error_threshold;
    AnalysisReport {
        count: points.len(),
        diverged: points.iter().filter(|p| p.diverged).count(),
        fitness: MetricSummary::of(&fitness),
        mr_falsification: MetricSummary::of(&mr),
        control_error: MetricSummary::of(&ce),
        trivial_failures: points.iter().filter(|p| p.diverged || p.control_error >= th).count(),
        below_threshold: ce.iter().filter(|&&c| c < th).count(),
        r_squared_below_threshold: r_squared_below_threshold(points, th),
        fitness_histogram: Histogram::build(&fitness, opts.bins, None),
        mr_falsification_histogram: Histogram::build(&mr, opts.bins, opts.clip),
        control_error_histogram: Histogram::build(&ce, opts.bins, opts.clip),
        archive_distance_histogram: archive_distances.map(|d| Histogram::build(d, opts.bins, None)),
    }
}

/// Mann-Whitney comparison of two evaluation sets on every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub fitness: MannWhitney,
    pub mr_falsification: MannWhitney,
    pub control_error: MannWhitney,
}

/// Compares `a` against `b`; U is from `a`'s perspective. Diverged tests take part in the
/// fitness comparison only.
pub fn compare(a: &[EvalPoint], b: &[EvalPoint]) -> Result<Comparison, StatsError> {
    let col = |s: &[EvalPoint], f: fn(&EvalPoint) -> f64| -> Vec<f64> {
        s.iter().filter(|p| !p.diverged).map(f).collect()
    };
    let fa: Vec<f64> = a.iter().map(|p| p.fitness).collect();
    let fb: Vec<f64> = b.iter().map(|p| p.fitness).collect();
    Ok(Comparison {
        fitness: mann_whitney_u(&fa, &fb)?,
        mr_falsification: mann_whitney_u(
            &col(a, |p| p.mr_falsification),
            &col(b, |p| p.mr_falsification),
        )?,
        control_error: mann_whitney_u(&col(a, |p| p.control_error), &col(b, |p| p.control_error))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    /// Counts pairs with x above y (ties count one half): the definition of U.
    fn u_by_enumeration(x: &[f64], y: &[f64]) -> f64 {
        let mut u = 0.0;
        for a in x {
            for b in y {
                if a > b {
                    u += 1.0;
                } else if a == b {
                    u += 0.5;
                }
            }
        }
        u
    }

    #[test]
    fn u_hand_examples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert_eq!(r.u_other, 9.0);
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0]).unwrap();
        assert_eq!((r.u, r.u_other), (0.0, 2.0));
        let x = [1.0, 4.0, 4.0, 7.0];
        let r = mann_whitney_u(&x, &x).unwrap();
        assert_eq!(r.u, 8.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn u_matches_enumeration_with_ties() {
        let x = [1.0, 2.0, 2.0, 5.0, 7.0];
        let y = [2.0, 3.0, 5.0, 5.0];
        let r = mann_whitney_u(&x, &y).unwrap();
        assert_eq!(r.u, u_by_enumeration(&x, &y));
        assert_eq!(r.u + r.u_other, 20.0);
    }

    #[test]
    fn identical_values_give_p_one() {
        let r = mann_whitney_u(&[3.0; 4], &[3.0; 5]).unwrap();
        assert_eq!(r.u, 10.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn p_value_against_reference() {
        // No ties, so the variance is n1 n2 (n + 1) / 12.
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = (10..30).map(|v| f64::from(v) + 0.5).collect();
        let r = mann_whitney_u(&x, &y).unwrap();
        assert_eq!(r.u, 45.0);
        assert_eq!(r.u, u_by_enumeration(&x, &y));
        let sigma = libm::sqrt(20.0 * 20.0 * 41.0 / 12.0);
        let z = (200.0 - r.u - 0.5) / sigma;
        assert!((r.p - libm::erfc(z / core::f64::consts::SQRT_2)).abs() < 1e-15);
        let swapped = mann_whitney_u(&y, &x).unwrap();
        assert_eq!(swapped.p, r.p);
        assert!(r.p < 0.01);
    }

    #[test]
    fn extreme_separation_p_is_positive() {
        let x: Vec<f64> = (0..2000).map(f64::from).collect();
        let y: Vec<f64> = (5000..7000).map(f64::from).collect();
        let r = mann_whitney_u(&x, &y).unwrap();
        assert!(r.p > 0.0 && r.p < 1e-300);
    }

    #[test]
    fn empty_or_nan_samples_are_errors() {
        assert_eq!(mann_whitney_u(&[], &[1.0]), Err(StatsError::EmptySample("x")));
        assert_eq!(mann_whitney_u(&[1.0], &[f64::NAN]), Err(StatsError::NotANumber));
    }

    #[test]
    fn r_squared_cases() {
        assert_eq!(r_squared(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]), Some(1.0));
        assert_eq!(r_squared(&[(0.0, 2.0), (1.0, 2.0), (5.0, 2.0)]), Some(0.0));
        assert_eq!(r_squared(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]), Some(0.0));
        assert_eq!(r_squared(&[(0.0, 0.0), (1.0, 1.0)]), None);
        assert_eq!(r_squared(&[(1.0, 0.0), (1.0, 1.0), (1.0, 2.0)]), None);
    }

    #[test]
    fn r_squared_filters_by_threshold() {
        let pt = |c, m| EvalPoint {
            fitness: 0.0,
            mr_falsification: m,
            control_error: c,
            diverged: false,
        };
        let pts = vec![pt(0.0, 0.0), pt(0.1, 0.1), pt(0.2, 0.2), pt(0.5, 0.0), pt(0.6, 9.0)];
        assert_eq!(r_squared_below_threshold(&pts, 0.3), Some(1.0));
        assert_eq!(r_squared_below_threshold(&pts, 0.15), None);
    }

    #[test]
    fn histogram_counts() {
        let h = Histogram::build(&[0.0, 0.5, 1.0, 1.0, f64::INFINITY], 2, None);
        assert_eq!(h.counts, vec![1, 3]);
        assert_eq!(h.skipped, 1);
        let single = Histogram::build(&[0.3], 30, None);
        assert_eq!(single.total(), 1);
        assert_eq!(single.counts.iter().filter(|&&c| c > 0).count(), 1);
        let clipped = Histogram::build(&[0.1, 0.2, 5.0], 3, Some(0.6));
        assert_eq!(clipped.counts, vec![1, 1, 1]);
        assert_eq!(clipped.clipped, 1);
        for (got, want) in clipped.edges().iter().zip([0.0, 0.2, 0.4]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn summary_handles_empty_below_threshold_subset() {
        let pts = vec![EvalPoint {
            fitness: 0.1,
            mr_falsification: 0.2,
            control_error: 3.0,
            diverged: false,
        }];
        let rep = summarize(
            &pts,
            None,
            &ReportOptions { bins: 30, control_error_threshold: 0.15, clip: None },
        );
        assert_eq!(rep.r_squared_below_threshold, None);
        assert_eq!(rep.trivial_failures, 1);
        assert_eq!(rep.fitness_histogram.total(), 1);
        assert_eq!(rep.count, 1);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - libm::sqrt(5.0 / 3.0)).abs() < 1e-15);
    }
}
