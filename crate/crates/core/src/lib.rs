//! Search-based generation of reference input traces for closed-loop control systems.
//!
//! Test inputs are built by composing three metamorphic relations that hold for linear
//! time-invariant systems (superposition, amplitude scaling and time shift) over small
//! initial input patterns. Each composition is a genetic program; evaluating it yields a
//! follow-up input together with the output the system *should* produce if it behaved
//! linearly. An evolutionary search then looks for programs whose actual output departs the
//! most from that expectation while the control error stays below a threshold.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and the
//! command-line front end live in the companion `mrgp` crate.
//!
//! Module map:
//! - [`trace`]: sampled multi-dimensional signals and the normalized distance.
//! - [`mrprog`]: program trees, random generation, breeding operators and realization.
//! - [`sut`]: the system-under-test interface, built-in plants and the execution cache.
//! - [`fitness`]: control error, MR-falsification degree and the penalized fitness.
//! - [`search`]: the (μ,λ) loop, the archive and the random baseline.
//! - [`stats`]: Mann-Whitney U, R², histograms and summaries.
//! - [`tune`]: the fitness-coefficient grid and its selection rule.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod fitness;
pub mod mrprog;
pub mod search;
pub mod stats;
pub mod sut;
pub mod trace;
pub mod tune;

pub use fitness::{EvalResult, FitnessConfig};
pub use mrprog::{Program, Realization, TraceGrid};
pub use search::{Archive, SearchConfig};
pub use sut::{ExecutionCache, PlantConfig, System};
pub use trace::{AmplitudeRange, Trace};

/// Deterministic generator used everywhere a seed is accepted.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's RNG from a plain integer seed.
pub fn rng_from_seed(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
