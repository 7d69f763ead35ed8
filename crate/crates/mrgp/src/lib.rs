//! Standard-library companion to `mrgp-core`: TOML configuration, run artifacts
//! (`archive.jsonl`, `evals.csv`, `generations.csv`, `report.json`, `manifest.json`) and the
//! `mrgp` command line.

pub mod cli;
pub mod config;
pub mod io;
pub mod run;

pub use config::Config;
