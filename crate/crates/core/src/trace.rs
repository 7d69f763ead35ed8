//! Uniformly sampled, multi-dimensional signals.
//!
//! A [`Trace`] stores `n_dim` channels of `k_max` samples taken every `dt` seconds. Every
//! operation that combines two traces requires identical shapes; the metamorphic relations
//! act element-wise on traces expressed in deviation-from-bias coordinates, so a time shift
//! pads the vacated prefix with zero (the operating point) and drops the overflowing tail.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("trace shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },
    #[error("a trace needs at least one dimension and one sample")]
    Empty,
    #[error("{got} samples do not fill {n_dim} dimensions of equal length")]
    Ragged { n_dim: usize, got: usize },
    #[error("non-finite sample in dimension {dim} at step {step}")]
    NonFinite { dim: usize, step: usize },
    #[error("sample period must be positive and finite, got {0}")]
    BadPeriod(f64),
    #[error("shift of {shift} samples is outside [0, {k_max})")]
    ShiftOutOfRange { shift: usize, k_max: usize },
    #[error("amplitude range for dimension {dim} is empty or not finite: ({lo}, {hi})")]
    BadRange { dim: usize, lo: f64, hi: f64 },
}

/// Dimensions, length and sample period of a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub n_dim: usize,
    pub k_max: usize,
    pub dt: f64,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} @ {}s", self.n_dim, self.k_max, self.dt)
    }
}

/// A sampled signal; samples are stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    n_dim: usize,
    k_max: usize,
    dt: f64,
    samples: Vec<f64>,
}

impl Trace {
    /// Builds a trace from channel-major samples (`samples[dim * k_max + k]`).
    pub fn new(n_dim: usize, dt: f64, samples: Vec<f64>) -> Result<Self, TraceError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(TraceError::BadPeriod(dt));
        }
        if n_dim == 0 || samples.is_empty() {
            return Err(TraceError::Empty);
        }
        if !samples.len().is_multiple_of(n_dim) {
            return Err(TraceError::Ragged { n_dim, got: samples.len() });
        }
        let k_max = samples.len() / n_dim;
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(TraceError::NonFinite { dim: i / k_max, step: i % k_max });
        }
        Ok(Self { n_dim, k_max, dt, samples })
    }

    /// Builds a trace from one vector per channel.
    pub fn from_channels(dt: f64, channels: Vec<Vec<f64>>) -> Result<Self, TraceError> {
        let n_dim = channels.len();
        let k_max = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != k_max) {
            let got = channels.iter().map(Vec::len).sum();
            return Err(TraceError::Ragged { n_dim, got });
        }
        Self::new(n_dim, dt, channels.into_iter().flatten().collect())
    }

    pub fn zeros(n_dim: usize, k_max: usize, dt: f64) -> Result<Self, TraceError> {
        Self::new(n_dim, dt, alloc::vec![0.0; n_dim * k_max])
    }

    /// Samples `f(dim, k)` on the grid.
    pub fn from_fn(
        n_dim: usize,
        k_max: usize,
        dt: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, TraceError> {
        let mut samples = Vec::with_capacity(n_dim * k_max);
        for dim in 0..n_dim {
            for k in 0..k_max {
                samples.push(f(dim, k));
            }
        }
        Self::new(n_dim, dt, samples)
    }

    pub fn n_dim(&self) -> usize {
        self.n_dim
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn shape(&self) -> Shape {
        Shape { n_dim: self.n_dim, k_max: self.k_max, dt: self.dt }
    }

    pub fn channel(&self, dim: usize) -> &[f64] {
        &self.samples[dim * self.k_max..(dim + 1) * self.k_max]
    }

    pub fn get(&self, dim: usize, k: usize) -> f64 {
        self.samples[dim * self.k_max + k]
    }

    /// Raw channel-major samples.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn ensure_same_shape(&self, other: &Trace) -> Result<(), TraceError> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(TraceError::ShapeMismatch { left: self.shape(), right: other.shape() })
        }
    }

    /// Largest absolute value in one channel.
    pub fn max_abs(&self, dim: usize) -> f64 {
        self.channel(dim).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Element-wise sum (superposition without the halving).
    pub fn superimpose(&self, other: &Trace) -> Result<Trace, TraceError> {
        self.ensure_same_shape(other)?;
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect();
        Ok(Trace { samples, ..*self })
    }

    /// Element-wise multiplication by `s`.
    pub fn scale(&self, s: f64) -> Trace {
        let samples = self.samples.iter().map(|v| v * s).collect();
        Trace { samples, ..*self }
    }

    /// Delays every channel by `steps` samples. The prefix is padded with zero and
    /// the last `steps` samples fall off the end.
    pub fn shift(&self, steps: usize) -> Result<Trace, TraceError> {
        if steps >= self.k_max {
            return Err(TraceError::ShiftOutOfRange { shift: steps, k_max: self.k_max });
        }
        let mut samples = alloc::vec![0.0; self.samples.len()];
        for dim in 0..self.n_dim {
            let src = self.channel(dim);
            let dst = &mut samples[dim * self.k_max..(dim + 1) * self.k_max];
            dst[steps..].copy_from_slice(&src[..self.k_max - steps]);
        }
        Ok(Trace { samples, ..*self })
    }

    /// Adds a per-channel constant, e.g. to move between deviation and absolute coordinates.
    pub fn offset(&self, per_dim: &[f64]) -> Trace {
        assert_eq!(per_dim.len(), self.n_dim, "one offset per dimension");
        let mut samples = self.samples.clone();
        for (dim, chunk) in samples.chunks_mut(self.k_max).enumerate() {
            chunk.iter_mut().for_each(|v| *v += per_dim[dim]);
        }
        Trace { samples, ..*self }
    }

    /// Keeps samples `from..` of every channel.
    pub fn drop_prefix(&self, from: usize) -> Result<Trace, TraceError> {
        if from >= self.k_max {
            return Err(TraceError::Empty);
        }
        let samples =
            (0..self.n_dim).flat_map(|d| self.channel(d)[from..].iter().copied()).collect();
        Ok(Trace { n_dim: self.n_dim, k_max: self.k_max - from, dt: self.dt, samples })
    }

    /// Stable 64-bit fingerprint of shape and sample bits (FNV-1a).
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |word: u64| {
            for byte in word.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(PRIME);
            }
        };
        eat(self.n_dim as u64);
        eat(self.k_max as u64);
        eat(self.dt.to_bits());
        for v in &self.samples {
            // +0.0 and -0.0 compare equal, so they must hash equal too.
            eat(if *v == 0.0 { 0 } else { v.to_bits() });
        }
        h
    }
}

/// Normalized Euclidean distance: the per-step Euclidean norm of the difference, summed over
/// steps and divided by `n_dim * k_max`.
pub fn distance(a: &Trace, b: &Trace) -> Result<f64, TraceError> {
    a.ensure_same_shape(b)?;
    let mut total = 0.0;
    for k in 0..a.k_max {
        let mut sq = 0.0;
        for dim in 0..a.n_dim {
            let d = a.get(dim, k) - b.get(dim, k);
            sq += d * d;
        }
        total += libm::sqrt(sq);
    }
    Ok(total / (a.n_dim * a.k_max) as f64)
}

/// Valid input interval per dimension, in absolute trace units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct AmplitudeRange {
    bounds: Vec<(f64, f64)>,
}

impl AmplitudeRange {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self, TraceError> {
        if bounds.is_empty() {
            return Err(TraceError::Empty);
        }
        for (dim, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(TraceError::BadRange { dim, lo, hi });
            }
        }
        Ok(Self { bounds })
    }

    /// Same interval on every dimension.
    pub fn uniform(n_dim: usize, lo: f64, hi: f64) -> Result<Self, TraceError> {
        Self::new(alloc::vec![(lo, hi); n_dim])
    }

    pub fn n_dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Midpoint of the interval; zero-centred patterns are offset by this before execution.
    pub fn bias(&self, dim: usize) -> f64 {
        let (lo, hi) = self.bounds[dim];
        (lo + hi) / 2.0
    }

    pub fn half_width(&self, dim: usize) -> f64 {
        let (lo, hi) = self.bounds[dim];
        (hi - lo) / 2.0
    }

    pub fn biases(&self) -> Vec<f64> {
        (0..self.n_dim()).map(|d| self.bias(d)).collect()
    }

    pub fn min_half_width(&self) -> f64 {
        (0..self.n_dim()).map(|d| self.half_width(d)).fold(f64::INFINITY, f64::min)
    }

    /// True when every deviation sample lies within ± half-width of its dimension.
    pub fn contains_deviation(&self, trace: &Trace) -> bool {
        trace.n_dim() == self.n_dim()
            && (0..self.n_dim()).all(|d| trace.max_abs(d) <= self.half_width(d))
    }
}

impl TryFrom<Vec<(f64, f64)>> for AmplitudeRange {
    type Error = TraceError;

    fn try_from(bounds: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        Self::new(bounds)
    }
}

impl From<AmplitudeRange> for Vec<(f64, f64)> {
    fn from(range: AmplitudeRange) -> Self {
        range.bounds
    }
}
