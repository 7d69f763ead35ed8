//! Control error, MR-falsification degree and the penalized fitness.
//!
//! For a realized program with follow-up input `r`, expected output `e` and actual output
//! `y`, the control error is `d(r, y)` and the MR-falsification degree is `d(y, e)`. Fitness
//! grows linearly with the latter and is penalized exponentially once the control error
//! passes its threshold: `F = μ / b^(c (ε - ε_th))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mrprog::{Program, ProgramError, TraceGrid};
use crate::sut::{ExecutionCache, SutError, SutModel};
use crate::trace::{distance, Trace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitnessConfigError {
    #[error("fitness base must be finite and greater than 1, got {0}")]
    Base(f64),
    #[error("fitness exponent scale must be positive and finite, got {0}")]
    ExponentScale(f64),
    #[error("control error threshold must be positive and finite, got {0}")]
    Threshold(f64),
}

/// Coefficients of the penalized fitness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitnessConfig {
    /// Exponential base `b > 1`.
    pub base: f64,
    /// Exponent scaling `c`, in 1 / trace unit.
    pub exponent_scale: f64,
    /// Control error above which a test counts as a trivial failure.
    pub control_error_threshold: f64,
}

impl Default for FitnessConfig {
    /// `b = e`, `c = 6.66`, `ε_th = 0.15`.
    fn default() -> Self {
        Self { base: core::f64::consts::E, exponent_scale: 6.66, control_error_threshold: 0.15 }
    }
}

impl FitnessConfig {
    pub fn validate(&self) -> Result<(), FitnessConfigError> {
        if !(self.base.is_finite() && self.base > 1.0) {
            return Err(FitnessConfigError::Base(self.base));
        }
        if !(self.exponent_scale.is_finite() && self.exponent_scale > 0.0) {
            return Err(FitnessConfigError::ExponentScale(self.exponent_scale));
        }
        let th = self.control_error_threshold;
        if !(th.is_finite() && th > 0.0) {
            return Err(FitnessConfigError::Threshold(th));
        }
        Ok(())
    }
}

/// `μ / b^(c (ε - ε_th))`.
pub fn fitness_value(mr_falsification: f64, control_error: f64, cfg: &FitnessConfig) -> f64 {
    let exponent = cfg.exponent_scale * (control_error - cfg.control_error_threshold);
    mr_falsification / libm::pow(cfg.base, exponent)
}

/// Everything measured for one assessed program.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Follow-up input, deviation coordinates.
    pub input: Trace,
    /// Expected output built from the initial traces' outputs; `None` if an execution failed.
    pub expected: Option<Trace>,
    /// Actual output of the follow-up test; `None` if it failed.
    pub actual: Option<Trace>,
    pub control_error: f64,
    pub mr_falsification: f64,
    pub fitness: f64,
    /// SUT executions spent on this assessment.
    pub executions: usize,
    /// Number of distinct initial traces in the program.
    pub terminals: usize,
    /// Set when any execution diverged; such results have zero fitness and infinite metrics.
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssessError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Sut(SutError),
}

/// Realizes `program`, runs its initial traces once each and the follow-up once, and scores
/// the result. The cache is cleared first, so `executions == terminals + 1` unless a
/// terminal diverged (remaining runs are skipped then).
pub fn assess(
    program: &Program,
    grid: &TraceGrid,
    sut: &SutModel,
    cache: &mut ExecutionCache,
    cfg: &FitnessConfig,
) -> Result<EvalResult, AssessError> {
    let realization = program.realize(grid)?;
    cache.clear();
    let terminals = realization.terminals.len();
    let diverged = |input: Trace, executions: usize| EvalResult {
        input,
        expected: None,
        actual: None,
        control_error: f64::INFINITY,
        mr_falsification: f64::INFINITY,
        fitness: 0.0,
        executions,
        terminals,
        diverged: true,
    };

    let mut outputs = alloc::vec::Vec::with_capacity(terminals);
    for t in &realization.terminals {
        match cache.execute(sut, t) {
            Ok(y) => outputs.push(y),
            Err(SutError::Diverged { .. }) => {
                return Ok(diverged(realization.input, cache.executions()));
            }
            Err(e) => return Err(AssessError::Sut(e)),
        }
    }
    let expected = realization.expected_output(&outputs)?;
    let actual = match cache.execute_uncached(sut, &realization.input) {
        Ok(y) => y,
        Err(SutError::Diverged { .. }) => {
            return Ok(diverged(realization.input, cache.executions()));
        }
        Err(e) => return Err(AssessError::Sut(e)),
    };
    let control_error = distance(&realization.input, &actual).map_err(ProgramError::from)?;
    let mr_falsification = distance(&actual, &expected).map_err(ProgramError::from)?;
    Ok(EvalResult {
        input: realization.input,
        expected: Some(expected),
        actual: Some(actual),
        control_error,
        mr_falsification,
        fitness: fitness_value(mr_falsification, control_error, cfg),
        executions: cache.executions(),
        terminals,
        diverged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrprog::TreeLimits;
    use crate::sut::PlantConfig;
    use crate::trace::AmplitudeRange;
    use alloc::vec;

    const CF: FitnessConfig = FitnessConfig {
        base: core::f64::consts::E,
        exponent_scale: 6.66,
        control_error_threshold: 0.15,
    };

    #[test]
    fn fitness_at_threshold_equals_mr_falsification() {
        assert_eq!(fitness_value(0.2, 0.15, &CF), 0.2);
        assert_eq!(fitness_value(0.0, 3.0, &CF), 0.0);
    }

    #[test]
    fn fitness_worked_example() {
        // 0.2 / e^(6.66 * 0.15) = 0.2 / e^0.999
        let f = fitness_value(0.2, 0.30, &CF);
        let want = 0.2 / libm::exp(0.999);
        assert!((f - want).abs() < 1e-12);
        assert!((f - 0.0736).abs() < 5e-5);
    }

    #[test]
    fn fitness_one_unit_above_threshold_divides_by_base() {
        let cfg = FitnessConfig { base: 10.0, exponent_scale: 4.0, control_error_threshold: 0.5 };
        let f = fitness_value(3.0, 0.5 + 1.0 / 4.0, &cfg);
        assert!((f - 0.3).abs() < 1e-12 * 0.3);
    }

    #[test]
    fn config_validation() {
        assert!(CF.validate().is_ok());
        assert_eq!(
            FitnessConfig { base: 1.0, ..CF }.validate(),
            Err(FitnessConfigError::Base(1.0))
        );
        assert!(FitnessConfig { exponent_scale: 0.0, ..CF }.validate().is_err());
        assert!(FitnessConfig { control_error_threshold: -1.0, ..CF }.validate().is_err());
    }

    #[test]
    fn lti_assessment_has_negligible_mr_falsification() {
        let range = AmplitudeRange::uniform(2, -2.0, 2.0).unwrap();
        let grid = TraceGrid::new(10.0, 3.0, 0.02, vec![0.2, 0.2], range.clone()).unwrap();
        let sut =
            SutModel::from_plant(&PlantConfig::by_name("lti2").unwrap(), range, 3.0, 0.02).unwrap();
        let mut cache = ExecutionCache::new();
        let mut rng = crate::rng_from_seed(5);
        for _ in 0..10 {
            let p = Program::random(&mut rng, &grid, &TreeLimits::default());
            let r = assess(&p, &grid, &sut, &mut cache, &CF).unwrap();
            assert!(r.mr_falsification < 1e-6, "{}", r.mr_falsification);
            assert_eq!(r.executions, r.terminals + 1);
            assert!(!r.diverged);
            assert!(
                r.fitness
                    < 1e-6 / libm::pow(CF.base, CF.exponent_scale * (r.control_error - 0.15))
                        + 1e-300
            );
        }
    }
}
