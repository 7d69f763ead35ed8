//! Programs that compose metamorphic relations over initial input traces.
//!
//! The grammar is
//!
//! ```text
//! <trace> ::= TRC | <trace> SP <trace> | α AS <trace> | δ TS <trace>
//! ```
//!
//! where `TRC` is an initial pattern trace, `SP` superimposes two traces (always halved so
//! the result stays in range), `AS` scales by an amount picked by `α ∈ [0, 1]` out of the
//! scalings that keep the trace valid, and `TS` delays by `δ` samples. The tree types make
//! every constructed program grammar-valid; the remaining structural rules (at least one
//! non-terminal, node cap) are enforced by the generator and the breeding operators.
//!
//! Realizing a program evaluates it bottom-up into a follow-up input and a [`Recipe`]: the
//! exact operator sequence, with the resolved scaling factors, that maps the outputs of the
//! initial traces to the expected output of the follow-up test.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{AmplitudeRange, Trace, TraceError};

/// Shape of an initial pattern on one channel; time parameters `t1..t4` are in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatternKind {
    /// `+b` from `t1`, `-b` from `t2`, back to 0 at `t3`.
    Step,
    /// Ramp to `+b` over `[t1, t2]`, hold, ramp back to 0 over `[t3, t4]`.
    Ramp,
    /// 0 at `t1`, `+b` at `t2`, `-b` at `t3`, 0 at `t4`, linear in between.
    Triangle,
    /// Ramp to `+b` over `[t1, t2]`, hold until `t3`, drop to `-b` and ramp back to 0 by `t4`.
    Trapezoid,
}

impl PatternKind {
    pub const ALL: [PatternKind; 4] =
        [PatternKind::Step, PatternKind::Ramp, PatternKind::Triangle, PatternKind::Trapezoid];

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Step => "step",
            PatternKind::Ramp => "ramp",
            PatternKind::Triangle => "triangle",
            PatternKind::Trapezoid => "trapezoid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// One channel of an initial trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPattern {
    pub kind: PatternKind,
    pub times: [f64; 4],
}

fn lerp(from: f64, to: f64, t: f64, t0: f64, t1: f64) -> f64 {
    if t1 <= t0 {
        return to;
    }
    from + (to - from) * (t - t0) / (t1 - t0)
}

impl ChannelPattern {
    /// Value of the pattern at time `t` for amplitude `amp`; always within `[-amp, amp]`.
    pub fn value(&self, t: f64, amp: f64) -> f64 {
        let [t1, t2, t3, t4] = self.times;
        let unit = match self.kind {
            PatternKind::Step => {
                if t < t1 || t >= t3 {
                    0.0
                } else if t < t2 {
                    1.0
                } else {
                    -1.0
                }
            }
            PatternKind::Ramp => {
                if t < t1 || t >= t4 {
                    0.0
                } else if t < t2 {
                    lerp(0.0, 1.0, t, t1, t2)
                } else if t < t3 {
                    1.0
                } else {
                    lerp(1.0, 0.0, t, t3, t4)
                }
            }
            PatternKind::Triangle => {
                if t < t1 || t >= t4 {
                    0.0
                } else if t < t2 {
                    lerp(0.0, 1.0, t, t1, t2)
                } else if t < t3 {
                    lerp(1.0, -1.0, t, t2, t3)
                } else {
                    lerp(-1.0, 0.0, t, t3, t4)
                }
            }
            PatternKind::Trapezoid => {
                if t < t1 || t >= t4 {
                    0.0
                } else if t < t2 {
                    lerp(0.0, 1.0, t, t1, t2)
                } else if t < t3 {
                    1.0
                } else {
                    lerp(-1.0, 0.0, t, t3, t4)
                }
            }
        };
        amp * unit.clamp(-1.0, 1.0)
    }

    fn random<R: Rng + ?Sized>(rng: &mut R, horizon: f64) -> Self {
        let kind = PatternKind::ALL[rng.gen_range(0..PatternKind::ALL.len())];
        loop {
            let mut times = [0.0; 4];
            for t in &mut times {
                *t = rng.gen::<f64>() * horizon;
            }
            times.sort_by(f64::total_cmp);
            if times[0] < times[1] && times[2] < times[3] {
                return Self { kind, times };
            }
        }
    }

    fn is_well_formed(&self, horizon: f64) -> bool {
        let [t1, t2, t3, t4] = self.times;
        0.0 <= t1 && t1 < t2 && t2 <= t3 && t3 < t4 && t4 <= horizon
    }
}

/// An initial input trace: one independently drawn pattern per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalTrace {
    pub channels: Vec<ChannelPattern>,
}

impl TerminalTrace {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, grid: &TraceGrid) -> Self {
        let channels =
            (0..grid.n_dim()).map(|_| ChannelPattern::random(rng, grid.pattern_horizon)).collect();
        Self { channels }
    }

    /// Samples the patterns on the grid, in deviation coordinates.
    pub fn render(&self, grid: &TraceGrid) -> Result<Trace, TraceError> {
        if self.channels.len() != grid.n_dim() {
            return Err(TraceError::Ragged { n_dim: grid.n_dim(), got: self.channels.len() });
        }
        Trace::from_fn(grid.n_dim(), grid.k_max, grid.dt, |dim, k| {
            self.channels[dim].value(k as f64 * grid.dt, grid.amplitude[dim])
        })
    }
}

/// Selector for the amplitude scaling, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alpha(pub f64);

/// Time-shift delay in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delay(pub usize);

/// A trace-typed expression.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceExpr {
    Terminal(TerminalTrace),
    Superimpose(Box<TraceExpr>, Box<TraceExpr>),
    Scale(Alpha, Box<TraceExpr>),
    Shift(Delay, Box<TraceExpr>),
}

impl TraceExpr {
    /// Nesting depth counted in non-terminals; a bare terminal has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            TraceExpr::Terminal(_) => 0,
            TraceExpr::Superimpose(a, b) => 1 + a.depth().max(b.depth()),
            TraceExpr::Scale(_, x) | TraceExpr::Shift(_, x) => 1 + x.depth(),
        }
    }

    /// Node count, including the α and δ value terminals.
    pub fn node_count(&self) -> usize {
        match self {
            TraceExpr::Terminal(_) => 1,
            TraceExpr::Superimpose(a, b) => 1 + a.node_count() + b.node_count(),
            TraceExpr::Scale(_, x) | TraceExpr::Shift(_, x) => 2 + x.node_count(),
        }
    }

    fn terminals<'a>(&'a self, out: &mut Vec<&'a TerminalTrace>) {
        match self {
            TraceExpr::Terminal(t) => out.push(t),
            TraceExpr::Superimpose(a, b) => {
                a.terminals(out);
                b.terminals(out);
            }
            TraceExpr::Scale(_, x) | TraceExpr::Shift(_, x) => x.terminals(out),
        }
    }

    /// Random expression of exactly `depth` nested non-terminals.
    fn random<R: Rng + ?Sized>(rng: &mut R, grid: &TraceGrid, depth: usize) -> Self {
        if depth == 0 {
            return TraceExpr::Terminal(TerminalTrace::random(rng, grid));
        }
        match rng.gen_range(0..3) {
            0 => {
                let other = rng.gen_range(0..depth);
                let (l, r) =
                    if rng.gen::<bool>() { (depth - 1, other) } else { (other, depth - 1) };
                TraceExpr::Superimpose(
                    Box::new(Self::random(rng, grid, l)),
                    Box::new(Self::random(rng, grid, r)),
                )
            }
            1 => TraceExpr::Scale(random_alpha(rng), Box::new(Self::random(rng, grid, depth - 1))),
            _ => TraceExpr::Shift(
                random_delay(rng, grid),
                Box::new(Self::random(rng, grid, depth - 1)),
            ),
        }
    }
}

fn random_alpha<R: Rng + ?Sized>(rng: &mut R) -> Alpha {
    Alpha(rng.gen::<f64>())
}

fn random_delay<R: Rng + ?Sized>(rng: &mut R, grid: &TraceGrid) -> Delay {
    Delay(rng.gen_range(0..=grid.max_shift))
}

/// Type of an addressable node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Trace,
    Alpha,
    Delay,
}

/// A detached node: a whole trace subtree or a value terminal.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeValue {
    Trace(TraceExpr),
    Alpha(Alpha),
    Delay(Delay),
}

impl NodeValue {
    pub fn kind(&self) -> NodeKind {
        match self {
            NodeValue::Trace(_) => NodeKind::Trace,
            NodeValue::Alpha(_) => NodeKind::Alpha,
            NodeValue::Delay(_) => NodeKind::Delay,
        }
    }
}

/// Sampling grid, pattern amplitudes and valid range shared by every program of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceGrid {
    pub dt: f64,
    /// Samples per test window (warm-up excluded).
    pub k_max: usize,
    /// Latest time, in seconds, at which an initial pattern may still be active.
    pub pattern_horizon: f64,
    /// Largest time-shift delay in samples.
    pub max_shift: usize,
    /// Initial pattern amplitude per dimension.
    pub amplitude: Vec<f64>,
    pub range: AmplitudeRange,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("{field} must be positive and finite")]
    NotPositive { field: &'static str },
    #[error("warm-up ({warm_up}s) must be shorter than the test duration ({duration}s)")]
    WarmUpTooLong { warm_up: f64, duration: f64 },
    #[error("amplitude has {got} entries but the range has {n_dim} dimensions")]
    AmplitudeDims { got: usize, n_dim: usize },
    #[error("amplitude {amp} of dimension {dim} exceeds the half-width {half_width}")]
    AmplitudeTooLarge { dim: usize, amp: f64, half_width: f64 },
}

impl TraceGrid {
    /// Builds the grid of a test window of `duration` seconds.
    ///
    /// Initial patterns end by `duration - warm_up`, which leaves a settling tail as long as
    /// the warm-up; delays are drawn on the sample grid up to a quarter of the pattern horizon.
    pub fn new(
        duration: f64,
        warm_up: f64,
        dt: f64,
        amplitude: Vec<f64>,
        range: AmplitudeRange,
    ) -> Result<Self, GridError> {
        for (field, v) in [("test_duration", duration), ("dt", dt)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GridError::NotPositive { field });
            }
        }
        if !(warm_up.is_finite() && warm_up >= 0.0 && warm_up < duration) {
            return Err(GridError::WarmUpTooLong { warm_up, duration });
        }
        if amplitude.len() != range.n_dim() {
            return Err(GridError::AmplitudeDims { got: amplitude.len(), n_dim: range.n_dim() });
        }
        for (dim, &amp) in amplitude.iter().enumerate() {
            let half_width = range.half_width(dim);
            if !(amp.is_finite() && amp > 0.0) {
                return Err(GridError::NotPositive { field: "amplitude" });
            }
            if amp > half_width {
                return Err(GridError::AmplitudeTooLarge { dim, amp, half_width });
            }
        }
        let k_max = libm::round(duration / dt) as usize;
        if k_max == 0 {
            return Err(GridError::NotPositive { field: "test_duration / dt" });
        }
        let pattern_horizon = duration - warm_up;
        let max_shift = ((libm::floor(0.25 * pattern_horizon / dt)) as usize).min(k_max - 1);
        Ok(Self { dt, k_max, pattern_horizon, max_shift, amplitude, range })
    }

    pub fn n_dim(&self) -> usize {
        self.range.n_dim()
    }

    /// Upper bound on any amplitude scaling: smallest half-width over smallest initial amplitude.
    pub fn scaling_cap(&self) -> f64 {
        let min_amp = self.amplitude.iter().copied().fold(f64::INFINITY, f64::min);
        self.range.min_half_width() / min_amp
    }

    /// Scalings in `[0, max_scaling(x)]` keep `x` within range.
    pub fn max_scaling(&self, x: &Trace) -> f64 {
        let mut best = self.scaling_cap();
        for dim in 0..x.n_dim() {
            let peak = x.max_abs(dim);
            if peak > 0.0 {
                best = best.min(self.range.half_width(dim) / peak);
            }
        }
        best
    }
}

/// Depth and size limits for generated and bred programs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeLimits {
    pub init_depth: (usize, usize),
    pub mutation_depth: (usize, usize),
    pub max_nodes: usize,
}

impl Default for TreeLimits {
    fn default() -> Self {
        Self { init_depth: (4, 8), mutation_depth: (2, 4), max_nodes: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProgramError {
    #[error("a program must contain at least one non-terminal")]
    BareTerminal,
    #[error("program has {nodes} nodes, more than the cap of {max}")]
    TooLarge { nodes: usize, max: usize },
    #[error("α = {0} is outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("delay of {delay} samples exceeds the maximum {max}")]
    DelayOutOfRange { delay: usize, max: usize },
    #[error("malformed pattern time parameters {0:?}")]
    BadPattern([f64; 4]),
    #[error("terminal has {got} channels, expected {n_dim}")]
    ChannelCount { got: usize, n_dim: usize },
    #[error("no output supplied for terminal {0}")]
    MissingOutput(usize),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// A GP individual: a trace-typed expression with at least one non-terminal at the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    root: TraceExpr,
}

impl Program {
    pub fn new(root: TraceExpr) -> Result<Self, ProgramError> {
        if matches!(root, TraceExpr::Terminal(_)) {
            return Err(ProgramError::BareTerminal);
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &TraceExpr {
        &self.root
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub fn terminals(&self) -> Vec<&TerminalTrace> {
        let mut out = Vec::new();
        self.root.terminals(&mut out);
        out
    }

    /// Random program whose depth lies in `limits.init_depth` and whose size respects the cap.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, grid: &TraceGrid, limits: &TreeLimits) -> Self {
        let (lo, hi) = limits.init_depth;
        let lo = lo.max(1);
        let hi = hi.max(lo);
        loop {
            let depth = rng.gen_range(lo..=hi);
            let root = TraceExpr::random(rng, grid, depth);
            if root.node_count() <= limits.max_nodes {
                return Self { root };
            }
        }
    }

    /// Checks every structural rule and ephemeral-constant range.
    pub fn validate(&self, grid: &TraceGrid, limits: &TreeLimits) -> Result<(), ProgramError> {
        if matches!(self.root, TraceExpr::Terminal(_)) {
            return Err(ProgramError::BareTerminal);
        }
        let nodes = self.node_count();
        if nodes > limits.max_nodes {
            return Err(ProgramError::TooLarge { nodes, max: limits.max_nodes });
        }
        validate_expr(&self.root, grid)
    }

    /// Kind of the node at pre-order index `idx` (value terminals follow their operator).
    pub fn kind_at(&self, idx: usize) -> Option<NodeKind> {
        self.node_at(idx).map(|v| v.kind())
    }

    /// A copy of the node at pre-order index `idx`.
    pub fn node_at(&self, idx: usize) -> Option<NodeValue> {
        let mut cursor = idx;
        find_node(&self.root, &mut cursor)
    }

    /// Pre-order indices of all nodes of the given kind.
    pub fn indices_of(&self, kind: NodeKind) -> Vec<usize> {
        let mut kinds = Vec::with_capacity(self.node_count());
        collect_kinds(&self.root, &mut kinds);
        kinds.iter().enumerate().filter(|(_, k)| **k == kind).map(|(i, _)| i).collect()
    }

    /// Replaces the node at `idx` with `value` (same kind), returning the old node.
    /// The result is not re-validated; a root replaced by a terminal is representable here
    /// only transiently and is rejected by the breeding operators.
    pub fn replace_at(&mut self, idx: usize, value: NodeValue) -> Option<NodeValue> {
        let mut cursor = idx;
        replace_node(&mut self.root, &mut cursor, value)
    }

    /// Evaluates the program into its follow-up input and expected-output recipe.
    pub fn realize(&self, grid: &TraceGrid) -> Result<Realization, ProgramError> {
        let mut terminals = Vec::new();
        let (input, recipe) = realize_expr(&self.root, grid, &mut terminals)?;
        Ok(Realization { input, recipe, terminals })
    }
}

fn validate_expr(expr: &TraceExpr, grid: &TraceGrid) -> Result<(), ProgramError> {
    match expr {
        TraceExpr::Terminal(t) => {
            if t.channels.len() != grid.n_dim() {
                return Err(ProgramError::ChannelCount {
                    got: t.channels.len(),
                    n_dim: grid.n_dim(),
                });
            }
            for c in &t.channels {
                if !c.is_well_formed(grid.pattern_horizon) {
                    return Err(ProgramError::BadPattern(c.times));
                }
            }
            Ok(())
        }
        TraceExpr::Superimpose(a, b) => {
            validate_expr(a, grid)?;
            validate_expr(b, grid)
        }
        TraceExpr::Scale(Alpha(a), x) => {
            if !(0.0..=1.0).contains(a) {
                return Err(ProgramError::AlphaOutOfRange(*a));
            }
            validate_expr(x, grid)
        }
        TraceExpr::Shift(Delay(d), x) => {
            if *d > grid.max_shift {
                return Err(ProgramError::DelayOutOfRange { delay: *d, max: grid.max_shift });
            }
            validate_expr(x, grid)
        }
    }
}

fn collect_kinds(expr: &TraceExpr, out: &mut Vec<NodeKind>) {
    out.push(NodeKind::Trace);
    match expr {
        TraceExpr::Terminal(_) => {}
        TraceExpr::Superimpose(a, b) => {
            collect_kinds(a, out);
            collect_kinds(b, out);
        }
        TraceExpr::Scale(_, x) => {
            out.push(NodeKind::Alpha);
            collect_kinds(x, out);
        }
        TraceExpr::Shift(_, x) => {
            out.push(NodeKind::Delay);
            collect_kinds(x, out);
        }
    }
}

fn find_node(expr: &TraceExpr, cursor: &mut usize) -> Option<NodeValue> {
    if *cursor == 0 {
        return Some(NodeValue::Trace(expr.clone()));
    }
    *cursor -= 1;
    match expr {
        TraceExpr::Terminal(_) => None,
        TraceExpr::Superimpose(a, b) => find_node(a, cursor).or_else(|| find_node(b, cursor)),
        TraceExpr::Scale(alpha, x) => {
            if *cursor == 0 {
                return Some(NodeValue::Alpha(*alpha));
            }
            *cursor -= 1;
            find_node(x, cursor)
        }
        TraceExpr::Shift(delay, x) => {
            if *cursor == 0 {
                return Some(NodeValue::Delay(*delay));
            }
            *cursor -= 1;
            find_node(x, cursor)
        }
    }
}

fn replace_node(expr: &mut TraceExpr, cursor: &mut usize, value: NodeValue) -> Option<NodeValue> {
    if *cursor == 0 {
        return match value {
            NodeValue::Trace(new) => Some(NodeValue::Trace(core::mem::replace(expr, new))),
            _ => None,
        };
    }
    *cursor -= 1;
    match expr {
        TraceExpr::Terminal(_) => None,
        TraceExpr::Superimpose(a, b) => {
            let before = *cursor;
            let size_a = a.node_count();
            if before < size_a {
                replace_node(a, cursor, value)
            } else {
                *cursor -= size_a;
                replace_node(b, cursor, value)
            }
        }
        TraceExpr::Scale(alpha, x) => {
            if *cursor == 0 {
                return match value {
                    NodeValue::Alpha(new) => Some(NodeValue::Alpha(core::mem::replace(alpha, new))),
                    _ => None,
                };
            }
            *cursor -= 1;
            replace_node(x, cursor, value)
        }
        TraceExpr::Shift(delay, x) => {
            if *cursor == 0 {
                return match value {
                    NodeValue::Delay(new) => Some(NodeValue::Delay(core::mem::replace(delay, new))),
                    _ => None,
                };
            }
            *cursor -= 1;
            replace_node(x, cursor, value)
        }
    }
}

/// Replaces one uniformly chosen node with a fresh random node of the same kind.
///
/// Trace nodes get a new subtree whose depth lies in `limits.mutation_depth`; α and δ nodes
/// get a fresh ephemeral constant. Choices that would break the node cap are redrawn.
pub fn mutate<R: Rng + ?Sized>(
    program: &Program,
    rng: &mut R,
    grid: &TraceGrid,
    limits: &TreeLimits,
) -> Program {
    const ATTEMPTS: usize = 100;
    let nodes = program.node_count();
    let (lo, hi) = limits.mutation_depth;
    let hi = hi.max(lo);
    for _ in 0..ATTEMPTS {
        let idx = rng.gen_range(0..nodes);
        let fresh = match program.kind_at(idx) {
            Some(NodeKind::Trace) => {
                let depth = rng.gen_range(lo..=hi);
                NodeValue::Trace(TraceExpr::random(rng, grid, depth))
            }
            Some(NodeKind::Alpha) => NodeValue::Alpha(random_alpha(rng)),
            Some(NodeKind::Delay) => NodeValue::Delay(random_delay(rng, grid)),
            None => unreachable!("index below node count"),
        };
        let mut child = program.clone();
        child.replace_at(idx, fresh);
        if child.node_count() <= limits.max_nodes && !matches!(child.root, TraceExpr::Terminal(_)) {
            return child;
        }
    }
    program.clone()
}

/// Swaps the subtree at `i` of `a` with the subtree at `j` of `b`.
///
/// Returns `None` when the kinds differ or either child would be a bare terminal.
pub fn crossover_at(a: &Program, i: usize, b: &Program, j: usize) -> Option<(Program, Program)> {
    let from_a = a.node_at(i)?;
    let from_b = b.node_at(j)?;
    if from_a.kind() != from_b.kind() {
        return None;
    }
    let mut child_a = a.clone();
    let mut child_b = b.clone();
    child_a.replace_at(i, from_b)?;
    child_b.replace_at(j, from_a)?;
    if matches!(child_a.root, TraceExpr::Terminal(_))
        || matches!(child_b.root, TraceExpr::Terminal(_))
    {
        return None;
    }
    Some((child_a, child_b))
}

/// Subtree crossover between type-compatible nodes. After 20 rejected draws the parents are
/// returned unchanged.
pub fn crossover<R: Rng + ?Sized>(
    a: &Program,
    b: &Program,
    rng: &mut R,
    limits: &TreeLimits,
) -> (Program, Program) {
    const ATTEMPTS: usize = 20;
    for _ in 0..ATTEMPTS {
        let i = rng.gen_range(0..a.node_count());
        let Some(kind) = a.kind_at(i) else { continue };
        let candidates = b.indices_of(kind);
        if candidates.is_empty() {
            continue;
        }
        let j = candidates[rng.gen_range(0..candidates.len())];
        if let Some((x, y)) = crossover_at(a, i, b, j) {
            if x.node_count() <= limits.max_nodes && y.node_count() <= limits.max_nodes {
                return (x, y);
            }
        }
    }
    (a.clone(), b.clone())
}

/// Operator sequence that rebuilds a realized trace from the traces of its initial terminals.
#[derive(Debug, Clone, PartialEq)]
pub enum Recipe {
    /// Index into the distinct terminal traces.
    Terminal(usize),
    /// Resolved amplitude scaling factor.
    Scale(f64, Box<Recipe>),
    /// Time-shift delay in samples.
    Shift(usize, Box<Recipe>),
    /// Superposition followed by halving.
    HalfSum(Box<Recipe>, Box<Recipe>),
}

impl Recipe {
    /// Replays the recipe over one trace per distinct terminal.
    ///
    /// Fed the terminals' inputs this reproduces the follow-up input; fed their actual
    /// outputs it yields the expected output of the follow-up test.
    pub fn replay(&self, traces: &[Trace]) -> Result<Trace, ProgramError> {
        match self {
            Recipe::Terminal(i) => traces.get(*i).cloned().ok_or(ProgramError::MissingOutput(*i)),
            Recipe::Scale(s, x) => Ok(x.replay(traces)?.scale(*s)),
            Recipe::Shift(steps, x) => Ok(x.replay(traces)?.shift(*steps)?),
            Recipe::HalfSum(a, b) => {
                let a = a.replay(traces)?;
                let b = b.replay(traces)?;
                Ok(a.superimpose(&b)?.scale(0.5))
            }
        }
    }
}

/// A realized program.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    /// Follow-up input, in deviation coordinates.
    pub input: Trace,
    pub recipe: Recipe,
    /// Distinct initial input traces, indexed by [`Recipe::Terminal`].
    pub terminals: Vec<Trace>,
}

impl Realization {
    /// Builds the expected output from the actual outputs of the initial traces.
    pub fn expected_output(&self, terminal_outputs: &[Trace]) -> Result<Trace, ProgramError> {
        if terminal_outputs.len() < self.terminals.len() {
            return Err(ProgramError::MissingOutput(terminal_outputs.len()));
        }
        self.recipe.replay(terminal_outputs)
    }
}

fn realize_expr(
    expr: &TraceExpr,
    grid: &TraceGrid,
    terminals: &mut Vec<Trace>,
) -> Result<(Trace, Recipe), ProgramError> {
    match expr {
        TraceExpr::Terminal(t) => {
            if t.channels.len() != grid.n_dim() {
                return Err(ProgramError::ChannelCount {
                    got: t.channels.len(),
                    n_dim: grid.n_dim(),
                });
            }
            let trace = t.render(grid)?;
            let idx = match terminals.iter().position(|x| *x == trace) {
                Some(i) => i,
                None => {
                    terminals.push(trace.clone());
                    terminals.len() - 1
                }
            };
            Ok((trace, Recipe::Terminal(idx)))
        }
        TraceExpr::Scale(Alpha(alpha), x) => {
            let (x, rx) = realize_expr(x, grid, terminals)?;
            let s = alpha * grid.max_scaling(&x);
            Ok((x.scale(s), Recipe::Scale(s, Box::new(rx))))
        }
        TraceExpr::Shift(Delay(steps), x) => {
            let (x, rx) = realize_expr(x, grid, terminals)?;
            Ok((x.shift(*steps)?, Recipe::Shift(*steps, Box::new(rx))))
        }
        TraceExpr::Superimpose(a, b) => {
            let (a, ra) = realize_expr(a, grid, terminals)?;
            let (b, rb) = realize_expr(b, grid, terminals)?;
            Ok((a.superimpose(&b)?.scale(0.5), Recipe::HalfSum(Box::new(ra), Box::new(rb))))
        }
    }
}

// ---------------------------------------------------------------------------------------------
// Prefix S-expression format:
//   (SP <trace> <trace>) | (AS <alpha> <trace>) | (TS <steps> <trace>)
//   (TRC <kind> t1 t2 t3 t4 [<kind> t1 t2 t3 t4 ...])   one group per channel
// ---------------------------------------------------------------------------------------------

impl fmt::Display for TraceExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceExpr::Terminal(t) => {
                f.write_str("(TRC")?;
                for c in &t.channels {
                    let [t1, t2, t3, t4] = c.times;
                    write!(f, " {} {} {} {} {}", c.kind.name(), t1, t2, t3, t4)?;
                }
                f.write_str(")")
            }
            TraceExpr::Superimpose(a, b) => write!(f, "(SP {a} {b})"),
            TraceExpr::Scale(Alpha(a), x) => write!(f, "(AS {a} {x})"),
            TraceExpr::Shift(Delay(d), x) => write!(f, "(TS {d} {x})"),
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse program at token {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl FromStr for Program {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let tokens = tokenize(s);
        let mut parser = Parser { tokens: &tokens, pos: 0 };
        let root = parser.expr()?;
        if parser.pos != tokens.len() {
            return Err(parser.error("trailing input"));
        }
        Program::new(root).map_err(|e| ParseError { position: 0, message: alloc::format!("{e}") })
    }
}

fn tokenize(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in s.char_indices() {
        if ch == '(' || ch == ')' || ch.is_whitespace() {
            if let Some(st) = start.take() {
                out.push(&s[st..i]);
            }
            if !ch.is_whitespace() {
                out.push(&s[i..i + 1]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(st) = start {
        out.push(&s[st..]);
    }
    out
}

struct Parser<'a> {
    tokens: &'a [&'a str],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> ParseError {
        ParseError { position: self.pos, message: message.into() }
    }

    fn next(&mut self) -> Result<&'a str, ParseError> {
        let tok =
            *self.tokens.get(self.pos).ok_or_else(|| self.error("unexpected end of input"))?;
        self.pos += 1;
        Ok(tok)
    }

    fn expect(&mut self, want: &str) -> Result<(), ParseError> {
        let tok = self.next()?;
        if tok == want {
            Ok(())
        } else {
            self.pos -= 1;
            Err(self.error(&alloc::format!("expected `{want}`, found `{tok}`")))
        }
    }

    fn number<T: FromStr>(&mut self) -> Result<T, ParseError> {
        let tok = self.next()?;
        tok.parse().map_err(|_| {
            self.pos -= 1;
            self.error(&alloc::format!("`{tok}` is not a number"))
        })
    }

    fn expr(&mut self) -> Result<TraceExpr, ParseError> {
        self.expect("(")?;
        let head = self.next()?;
        let expr = match head {
            "SP" => {
                let a = self.expr()?;
                let b = self.expr()?;
                TraceExpr::Superimpose(Box::new(a), Box::new(b))
            }
            "AS" => {
                let alpha = self.number::<f64>()?;
                TraceExpr::Scale(Alpha(alpha), Box::new(self.expr()?))
            }
            "TS" => {
                let delay = self.number::<usize>()?;
                TraceExpr::Shift(Delay(delay), Box::new(self.expr()?))
            }
            "TRC" => {
                let mut channels = Vec::new();
                while self.tokens.get(self.pos).is_some_and(|t| *t != ")") {
                    let name = self.next()?;
                    let kind = PatternKind::from_name(name).ok_or_else(|| {
                        self.pos -= 1;
                        self.error(&alloc::format!("unknown pattern `{name}`"))
                    })?;
                    let mut times = [0.0; 4];
                    for t in &mut times {
                        *t = self.number()?;
                    }
                    channels.push(ChannelPattern { kind, times });
                }
                if channels.is_empty() {
                    return Err(self.error("TRC needs at least one channel pattern"));
                }
                TraceExpr::Terminal(TerminalTrace { channels })
            }
            other => {
                self.pos -= 1;
                return Err(self.error(&alloc::format!("unknown operator `{other}`")));
            }
        };
        self.expect(")")?;
        Ok(expr)
    }
}
