//! Argument parsing and dispatch for the `mrgp` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::io;
use crate::run::{self, Mode, RunError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MISMATCH: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "mrgp",
    version,
    about = "Evolve metamorphic test inputs for closed-loop controllers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the evolutionary search.
    Search(RunArgs),
    /// Assess randomly generated programs without selection.
    Baseline(RunArgs),
    /// Sweep the fitness coefficients over the 3×3 grid and pick a cell.
    Tune(RunArgs),
    /// Summarize one evals.csv, or compare two.
    Analyze(AnalyzeArgs),
    /// Re-execute archived programs and check their stored metrics.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Built-in subject used when no config file is given (lti2, sat2, quad1d, engine1).
    #[arg(long, value_name = "NAME", conflicts_with = "config")]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Overrides `search.seed`.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Inclusive seed range `A..B`; each seed runs into `<out>/seed-<n>`.
    #[arg(long, value_name = "A..B", value_parser = parse_seed_range)]
    pub seeds: Option<SeedRange>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Multiplies population, offspring and generations.
    #[arg(long, value_name = "F", default_value_t = 1.0)]
    pub budget_scale: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// One or two evals.csv files; with two, the first is compared against the second.
    #[arg(required = true, num_args = 1..=2)]
    pub evals: Vec<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Also write the report to `<DIR>/analysis.json`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// archive.jsonl written by a run.
    pub archive: PathBuf,
    /// Replay only this entry.
    #[arg(long)]
    pub id: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Where the input, expected and actual traces are written.
    #[arg(long, value_name = "DIR", default_value = "replay")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
}

/// Seeds of an inclusive `A..B` range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedRange(pub Vec<u64>);

fn parse_seed_range(s: &str) -> Result<SeedRange, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got `{s}`"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("`{a}`: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("`{b}`: {e}"))?;
    if a > b {
        return Err(format!("empty seed range {a}..{b}"));
    }
    Ok(SeedRange((a..=b).collect()))
}

/// `--config`, else a manifest next to `near`, else `--preset` (default `sat2`).
fn resolve_config(args: &ConfigArgs, near: Option<&Path>) -> Result<Config, RunError> {
    if let Some(path) = &args.config {
        return Ok(Config::load(path)?);
    }
    if args.preset.is_none() {
        if let Some(m) = near.and_then(run::sibling_manifest) {
            return Ok(m.config);
        }
    }
    Ok(Config::preset(args.preset.as_deref().unwrap_or("sat2"))?)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn dispatch(command: Command) -> Result<i32, RunError> {
    let mut stdout = std::io::stdout().lock();
    match command {
        Command::Search(a) => run_mode(&a, Mode::Search, &mut stdout),
        Command::Baseline(a) => run_mode(&a, Mode::Baseline, &mut stdout),
        Command::Tune(a) => {
            let cfg = resolve_config(&a.config, None)?.scaled(a.budget_scale)?;
            let seeds = seeds_of(&a, &cfg);
            let report = run::run_tune(&cfg, &seeds, &a.out)?;
            let _ = write!(stdout, "{}", report.table());
            match report.selection {
                Some(s) => {
                    let cell = report.cells[s.index];
                    let how = if s.within_tolerance { "" } else { " (closest to threshold)" };
                    let _ = writeln!(
                        stdout,
                        "selected b = {:.4}, c = {:.4}{how}",
                        cell.base, cell.exponent_scale
                    );
                }
                None => {
                    let _ = writeln!(stdout, "no usable cell");
                }
            }
            Ok(EXIT_OK)
        }
        Command::Analyze(a) => {
            let cfg = resolve_config(&a.config, a.evals.first().map(PathBuf::as_path))?;
            let report = run::analyze(&cfg, &a.evals)?;
            if let Some(dir) = &a.out {
                std::fs::create_dir_all(dir).map_err(|source| RunError::CreateDir {
                    path: dir.display().to_string(),
                    source,
                })?;
                io::write_json(&dir.join("analysis.json"), &report)?;
            }
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            let _ = writeln!(stdout, "{text}");
            Ok(EXIT_OK)
        }
        Command::Replay(a) => {
            let cfg = resolve_config(&a.config, Some(&a.archive))?;
            let checks = run::replay(&cfg, &a.archive, a.id, &a.out, a.tolerance)?;
            let mut failed = 0;
            for c in &checks {
                if c.matches {
                    let _ = writeln!(stdout, "entry {}: ok", c.id);
                } else {
                    failed += 1;
                    eprintln!(
                        "entry {}: mismatch: control_error stored {} got {} (diff {:e}); mr_falsification stored {} got {} (diff {:e})",
                        c.id,
                        c.stored_control_error,
                        c.control_error,
                        (c.control_error - c.stored_control_error).abs(),
                        c.stored_mr_falsification,
                        c.mr_falsification,
                        (c.mr_falsification - c.stored_mr_falsification).abs(),
                    );
                }
            }
            Ok(if failed == 0 { EXIT_OK } else { EXIT_MISMATCH })
        }
    }
}

fn seeds_of(a: &RunArgs, cfg: &Config) -> Vec<u64> {
    match (&a.seeds, a.seed) {
        (Some(s), _) => s.0.clone(),
        (None, Some(s)) => vec![s],
        (None, None) => vec![cfg.search.seed],
    }
}

fn run_mode(a: &RunArgs, mode: Mode, out: &mut impl Write) -> Result<i32, RunError> {
    let mut cfg = resolve_config(&a.config, None)?.scaled(a.budget_scale)?;
    if let Some(seeds) = &a.seeds {
        let s = run::run_seeds(&cfg, mode, a.budget_scale, &seeds.0, &a.out)?;
        let _ = writeln!(
            out,
            "{} seeds: archive ε_c = {}, μ = {}, F = {}",
            s.seeds.len(),
            s.archive_mean_control_error,
            s.archive_mean_mr_falsification,
            s.archive_mean_fitness,
        );
        return Ok(EXIT_OK);
    }
    if let Some(seed) = a.seed {
        cfg.search.seed = seed;
    }
    let r = run::run_to_dir(&cfg, mode, a.budget_scale, &a.out)?;
    let _ = writeln!(
        out,
        "{} evaluations, {} executions, archive {} (mean ε_c {:.4}, μ {:.4}, F {:.4}), written to {}",
        r.evaluations,
        r.executions,
        r.archive_size,
        r.archive_mean_control_error,
        r.archive_mean_mr_falsification,
        r.archive_mean_fitness,
        a.out.display(),
    );
    Ok(EXIT_OK)
}
