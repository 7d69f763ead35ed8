//! Systems under test and the execution harness.
//!
//! A [`System`] maps an absolute reference trace to an absolute output trace. [`SutModel`]
//! wraps one with the valid input range and warm-up: it holds the reference at the input bias
//! for the warm-up, appends the deviation trace shifted by the bias, and returns the output
//! after the warm-up with the bias subtracted. Metamorphic arithmetic therefore always
//! happens around the operating point.
//!
//! The built-in plants are single-input single-output loops replicated on every dimension.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{AmplitudeRange, Trace, TraceError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SutError {
    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },
    #[error("input has {got} dimensions, the system expects {want}")]
    Dimensions { got: usize, want: usize },
    #[error("deviation input leaves the valid range in dimension {dim}")]
    OutOfRange { dim: usize },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantConfigError {
    #[error("plant parameter `{0}` must be positive and finite")]
    NotPositive(&'static str),
    #[error("plant parameter `{0}` must be finite and non-negative")]
    Negative(&'static str),
}

/// A deterministic closed loop driven by an absolute reference.
pub trait System {
    /// Simulates from the plant's initial state; the output has the reference's shape.
    fn execute(&self, reference: &Trace) -> Result<Trace, SutError>;
}

/// PID gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pid {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

/// Optional uniform measurement noise, reseeded identically on every execution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoise {
    pub amplitude: f64,
    pub seed: u64,
}

/// Mass-spring-damper `m x'' + c x' + k x = u` under PID, optionally with actuator limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecondOrderParams {
    pub mass: f64,
    pub damping: f64,
    pub stiffness: f64,
    pub pid: Pid,
    /// Plant integration steps per control period.
    pub substeps: usize,
    pub noise: SensorNoise,
}

fn default_substeps() -> usize {
    10
}

impl Default for SecondOrderParams {
    fn default() -> Self {
        // Closed-loop poles near -4 and -3 ± 3j: settles in about a second.
        Self {
            mass: 1.0,
            damping: 2.0,
            stiffness: 4.0,
            pid: Pid { kp: 38.0, ki: 72.0, kd: 8.0 },
            substeps: default_substeps(),
            noise: SensorNoise::default(),
        }
    }
}

/// Actuator effort and slew limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorLimits {
    /// Largest absolute effort.
    pub effort: f64,
    /// Largest effort change per second.
    pub rate: f64,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        Self { effort: 30.0, rate: 300.0 }
    }
}

/// [`SecondOrderParams`] plus actuator limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SaturatedParams {
    #[serde(rename = "loop")]
    pub control_loop: SecondOrderParams,
    pub limits: ActuatorLimits,
}

/// Vertical double integrator with bounded thrust, gravity and a cascaded P / PID loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadParams {
    pub mass: f64,
    pub gravity: f64,
    pub max_thrust: f64,
    /// Position gain producing the velocity set-point.
    pub position_gain: f64,
    /// Velocity set-point limit.
    pub max_climb_rate: f64,
    pub velocity_pid: Pid,
    /// Mass assumed by the hover feed-forward; the integral term absorbs the mismatch.
    pub estimated_mass: f64,
    pub substeps: usize,
    pub noise: SensorNoise,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 0.03,
            gravity: 9.81,
            max_thrust: 0.6,
            position_gain: 2.0,
            max_climb_rate: 1.0,
            velocity_pid: Pid { kp: 0.25, ki: 0.05, kd: 0.0 },
            estimated_mass: 0.028,
            substeps: default_substeps(),
            noise: SensorNoise::default(),
        }
    }
}

/// First-order speed lag with transport delay, throttle saturation and a PI governor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineParams {
    /// Speed time constant in seconds.
    pub time_constant: f64,
    /// Steady-state speed per unit throttle.
    pub gain: f64,
    /// Throttle-to-torque transport delay in seconds.
    pub delay: f64,
    pub pi: Pid,
    /// Throttle bounds.
    pub throttle_min: f64,
    pub throttle_max: f64,
    /// Speed the engine idles at before the test; the governor starts in equilibrium there.
    pub initial_speed: f64,
    pub substeps: usize,
    pub noise: SensorNoise,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            time_constant: 0.8,
            gain: 8000.0,
            delay: 0.1,
            pi: Pid { kp: 2.0e-4, ki: 2.5e-4, kd: 0.0 },
            throttle_min: 0.0,
            throttle_max: 1.0,
            initial_speed: 3600.0,
            substeps: default_substeps(),
            noise: SensorNoise::default(),
        }
    }
}

/// Built-in plant selection and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PlantConfig {
    /// Strictly linear time-invariant loop.
    Lti2(SecondOrderParams),
    /// The same loop with actuator saturation and slew-rate limiting.
    Sat2(SaturatedParams),
    Quad1d(QuadParams),
    Engine1(EngineParams),
}

impl PlantConfig {
    pub fn name(&self) -> &'static str {
        match self {
            PlantConfig::Lti2(_) => "lti2",
            PlantConfig::Sat2(_) => "sat2",
            PlantConfig::Quad1d(_) => "quad1d",
            PlantConfig::Engine1(_) => "engine1",
        }
    }

    /// Default parameters of a built-in plant by name.
    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "lti2" => PlantConfig::Lti2(SecondOrderParams::default()),
            "sat2" => PlantConfig::Sat2(SaturatedParams::default()),
            "quad1d" => PlantConfig::Quad1d(QuadParams::default()),
            "engine1" => PlantConfig::Engine1(EngineParams::default()),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), PlantConfigError> {
        fn positive(name: &'static str, v: f64) -> Result<(), PlantConfigError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(PlantConfigError::NotPositive(name))
            }
        }
        fn non_negative(name: &'static str, v: f64) -> Result<(), PlantConfigError> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(PlantConfigError::Negative(name))
            }
        }
        fn pid(p: &Pid) -> Result<(), PlantConfigError> {
            non_negative("kp", p.kp)?;
            non_negative("ki", p.ki)?;
            non_negative("kd", p.kd)
        }
        fn second_order(p: &SecondOrderParams) -> Result<(), PlantConfigError> {
            positive("mass", p.mass)?;
            non_negative("damping", p.damping)?;
            non_negative("stiffness", p.stiffness)?;
            pid(&p.pid)?;
            positive("substeps", p.substeps as f64)?;
            non_negative("noise.amplitude", p.noise.amplitude)
        }
        match self {
            PlantConfig::Lti2(p) => second_order(p),
            PlantConfig::Sat2(p) => {
                second_order(&p.control_loop)?;
                positive("limits.effort", p.limits.effort)?;
                positive("limits.rate", p.limits.rate)
            }
            PlantConfig::Quad1d(p) => {
                positive("mass", p.mass)?;
                non_negative("gravity", p.gravity)?;
                positive("max_thrust", p.max_thrust)?;
                positive("position_gain", p.position_gain)?;
                positive("max_climb_rate", p.max_climb_rate)?;
                pid(&p.velocity_pid)?;
                positive("estimated_mass", p.estimated_mass)?;
                positive("substeps", p.substeps as f64)?;
                non_negative("noise.amplitude", p.noise.amplitude)
            }
            PlantConfig::Engine1(p) => {
                positive("time_constant", p.time_constant)?;
                positive("gain", p.gain)?;
                non_negative("delay", p.delay)?;
                pid(&p.pi)?;
                if !(p.throttle_min.is_finite() && p.throttle_max > p.throttle_min) {
                    return Err(PlantConfigError::NotPositive("throttle_max - throttle_min"));
                }
                non_negative("initial_speed", p.initial_speed)?;
                positive("substeps", p.substeps as f64)?;
                non_negative("noise.amplitude", p.noise.amplitude)
            }
        }
    }

    /// Instantiates the plant as a boxed [`System`].
    pub fn build(&self) -> Result<Box<dyn System>, PlantConfigError> {
        self.validate()?;
        Ok(match self.clone() {
            PlantConfig::Lti2(p) => Box::new(SecondOrderLoop { params: p, limits: None }),
            PlantConfig::Sat2(p) => {
                Box::new(SecondOrderLoop { params: p.control_loop, limits: Some(p.limits) })
            }
            PlantConfig::Quad1d(p) => Box::new(QuadLoop { params: p }),
            PlantConfig::Engine1(p) => Box::new(EngineLoop { params: p }),
        })
    }
}

struct Noise {
    amplitude: f64,
    rng: crate::SeededRng,
}

impl Noise {
    fn new(cfg: SensorNoise, dim: usize) -> Self {
        let seed = cfg.seed.wrapping_add(dim as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        Self { amplitude: cfg.amplitude, rng: crate::SeededRng::seed_from_u64(seed) }
    }

    fn sample(&mut self) -> f64 {
        if self.amplitude == 0.0 {
            0.0
        } else {
            self.amplitude * self.rng.gen_range(-1.0..=1.0)
        }
    }
}

/// Runs `channel` on every dimension of the reference and reassembles the outputs.
fn per_channel(
    reference: &Trace,
    mut channel: impl FnMut(usize, &[f64], &mut Vec<f64>) -> Result<(), SutError>,
) -> Result<Trace, SutError> {
    let mut samples = Vec::with_capacity(reference.samples().len());
    for dim in 0..reference.n_dim() {
        channel(dim, reference.channel(dim), &mut samples)?;
    }
    Ok(Trace::new(reference.n_dim(), reference.dt(), samples)?)
}

fn check(step: usize, values: &[f64]) -> Result<(), SutError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SutError::Diverged { step })
    }
}

struct SecondOrderLoop {
    params: SecondOrderParams,
    limits: Option<ActuatorLimits>,
}

impl System for SecondOrderLoop {
    fn execute(&self, reference: &Trace) -> Result<Trace, SutError> {
        let p = &self.params;
        let dt = reference.dt();
        let h = dt / p.substeps as f64;
        per_channel(reference, |dim, r, out| {
            let mut noise = Noise::new(p.noise, dim);
            let (mut x, mut v) = (0.0, 0.0);
            let mut integral = 0.0;
            let mut prev_y = 0.0;
            let mut u_prev = 0.0;
            for (k, &rk) in r.iter().enumerate() {
                let y = x + noise.sample();
                let e = rk - y;
                integral += e * dt;
                // Derivative on measurement avoids set-point kicks.
                let dy = if k == 0 { 0.0 } else { (y - prev_y) / dt };
                prev_y = y;
                let mut u = p.pid.kp * e + p.pid.ki * integral - p.pid.kd * dy;
                if let Some(lim) = self.limits {
                    let max_step = lim.rate * dt;
                    u = u.clamp(u_prev - max_step, u_prev + max_step);
                    u = u.clamp(-lim.effort, lim.effort);
                }
                u_prev = u;
                for _ in 0..p.substeps {
                    let a = (u - p.damping * v - p.stiffness * x) / p.mass;
                    v += a * h;
                    x += v * h;
                }
                check(k, &[x, v, integral, y])?;
                out.push(y);
            }
            Ok(())
        })
    }
}

struct QuadLoop {
    params: QuadParams,
}

impl System for QuadLoop {
    fn execute(&self, reference: &Trace) -> Result<Trace, SutError> {
        let p = &self.params;
        let dt = reference.dt();
        let h = dt / p.substeps as f64;
        let hover = p.estimated_mass * p.gravity;
        // Start trimmed: the integral already covers the feed-forward mass error.
        let ki = p.velocity_pid.ki;
        let trim = if ki > 0.0 { (p.mass - p.estimated_mass) * p.gravity / ki } else { 0.0 };
        per_channel(reference, |dim, r, out| {
            let mut noise = Noise::new(p.noise, dim);
            let (mut z, mut v) = (0.0, 0.0);
            let mut integral = trim;
            let mut prev_err = 0.0;
            for (k, &rk) in r.iter().enumerate() {
                let y = z + noise.sample();
                let v_set = (p.position_gain * (rk - y)).clamp(-p.max_climb_rate, p.max_climb_rate);
                let ev = v_set - v;
                integral += ev * dt;
                let dev = if k == 0 { 0.0 } else { (ev - prev_err) / dt };
                prev_err = ev;
                let pid = &p.velocity_pid;
                let thrust = (hover + pid.kp * ev + pid.ki * integral + pid.kd * dev)
                    .clamp(0.0, p.max_thrust);
                for _ in 0..p.substeps {
                    let a = thrust / p.mass - p.gravity;
                    v += a * h;
                    z += v * h;
                }
                check(k, &[z, v, integral, y])?;
                out.push(y);
            }
            Ok(())
        })
    }
}

struct EngineLoop {
    params: EngineParams,
}

impl System for EngineLoop {
    fn execute(&self, reference: &Trace) -> Result<Trace, SutError> {
        let p = &self.params;
        let dt = reference.dt();
        let h = dt / p.substeps as f64;
        let delay_steps = libm::round(p.delay / dt) as usize;
        // Equilibrium at the idle speed: the integral alone holds the matching throttle.
        let idle_throttle = (p.initial_speed / p.gain).clamp(p.throttle_min, p.throttle_max);
        let idle_integral = if p.pi.ki > 0.0 { idle_throttle / p.pi.ki } else { 0.0 };
        per_channel(reference, |dim, r, out| {
            let mut noise = Noise::new(p.noise, dim);
            let mut speed = p.initial_speed;
            let mut integral = idle_integral;
            let mut pipeline: alloc::collections::VecDeque<f64> =
                core::iter::repeat_n(idle_throttle, delay_steps).collect();
            for (k, &rk) in r.iter().enumerate() {
                let y = speed + noise.sample();
                let e = rk - y;
                integral += e * dt;
                let throttle =
                    (p.pi.kp * e + p.pi.ki * integral).clamp(p.throttle_min, p.throttle_max);
                pipeline.push_back(throttle);
                let applied = pipeline.pop_front().unwrap_or(throttle);
                for _ in 0..p.substeps {
                    speed += (p.gain * applied - speed) / p.time_constant * h;
                }
                check(k, &[speed, integral, y])?;
                out.push(y);
            }
            Ok(())
        })
    }
}

/// A system wrapped with its valid range and warm-up.
pub struct SutModel {
    system: Box<dyn System>,
    range: AmplitudeRange,
    warm_up_steps: usize,
}

impl SutModel {
    pub fn new(system: Box<dyn System>, range: AmplitudeRange, warm_up_steps: usize) -> Self {
        Self { system, range, warm_up_steps }
    }

    /// Builds a built-in plant; the warm-up is rounded to whole samples.
    pub fn from_plant(
        plant: &PlantConfig,
        range: AmplitudeRange,
        warm_up: f64,
        dt: f64,
    ) -> Result<Self, PlantConfigError> {
        let steps = libm::round(warm_up / dt) as usize;
        Ok(Self::new(plant.build()?, range, steps))
    }

    pub fn range(&self) -> &AmplitudeRange {
        &self.range
    }

    pub fn n_dim(&self) -> usize {
        self.range.n_dim()
    }

    pub fn warm_up_steps(&self) -> usize {
        self.warm_up_steps
    }

    /// Full absolute reference (warm-up included) for a deviation input.
    pub fn absolute_input(&self, deviation: &Trace) -> Result<Trace, SutError> {
        if deviation.n_dim() != self.n_dim() {
            return Err(SutError::Dimensions { got: deviation.n_dim(), want: self.n_dim() });
        }
        let (w, k) = (self.warm_up_steps, deviation.k_max());
        Ok(Trace::from_fn(deviation.n_dim(), w + k, deviation.dt(), |dim, i| {
            let bias = self.range.bias(dim);
            if i < w {
                bias
            } else {
                bias + deviation.get(dim, i - w)
            }
        })?)
    }

    /// Executes a test and returns the absolute reference and output, warm-up included.
    pub fn execute_absolute(&self, deviation: &Trace) -> Result<(Trace, Trace), SutError> {
        let reference = self.absolute_input(deviation)?;
        let output = self.system.execute(&reference)?;
        Ok((reference, output))
    }

    /// Executes a test in deviation coordinates: the returned trace is aligned sample for
    /// sample with `deviation` and has the bias removed.
    pub fn run_test(&self, deviation: &Trace) -> Result<Trace, SutError> {
        if let Some(dim) = (0..self.n_dim())
            .find(|&d| d < deviation.n_dim() && deviation.max_abs(d) > self.range.half_width(d))
        {
            return Err(SutError::OutOfRange { dim });
        }
        let (_, output) = self.execute_absolute(deviation)?;
        let tail = output.drop_prefix(self.warm_up_steps)?;
        let neg_bias: Vec<f64> = self.range.biases().iter().map(|b| -b).collect();
        Ok(tail.offset(&neg_bias))
    }
}

/// Inputs sharing a fingerprint, with their outcomes.
type Bucket = Vec<(Trace, Result<Trace, SutError>)>;

/// Memoizes executions by input content and counts how many actually ran.
#[derive(Debug, Default)]
pub struct ExecutionCache {
    entries: BTreeMap<u64, Bucket>,
    executions: usize,
}

impl ExecutionCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Executions performed since the last [`clear`](Self::clear).
    pub fn executions(&self) -> usize {
        self.executions
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.executions = 0;
    }

    /// Runs `input` unless an identical input already ran in this session.
    pub fn execute(&mut self, sut: &SutModel, input: &Trace) -> Result<Trace, SutError> {
        let key = input.fingerprint();
        if let Some(hit) = self.entries.get(&key).and_then(|v| v.iter().find(|(i, _)| i == input)) {
            return hit.1.clone();
        }
        let result = self.execute_uncached(sut, input);
        self.entries.entry(key).or_default().push((input.clone(), result.clone()));
        result
    }

    /// Runs `input` unconditionally; the execution is counted but not memoized.
    pub fn execute_uncached(&mut self, sut: &SutModel, input: &Trace) -> Result<Trace, SutError> {
        self.executions += 1;
        sut.run_test(input)
    }
}
