//! The operations behind each subcommand, independent of argument parsing.

use std::path::{Path, PathBuf};

use mrgp_core::fitness::{assess, AssessError, FitnessConfig};
use mrgp_core::mrprog::ParseError;
use mrgp_core::search::{run_baseline, run_search, Problem, SearchOutcome};
use mrgp_core::stats::{
    compare, mean_std, summarize, AnalysisReport, Comparison, EvalPoint, ReportOptions, StatsError,
};
use mrgp_core::trace::distance;
use mrgp_core::tune::{self, Selection, TuneCell};
use mrgp_core::{ExecutionCache, Program};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::io::{self, IoError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("assessment failed: {0}")]
    Assess(#[from] AssessError),
    #[error("archive entry {id}: {source}")]
    Program { id: usize, source: ParseError },
    #[error("statistics: {0}")]
    Stats(#[from] StatsError),
    #[error("cannot create {path}: {source}")]
    CreateDir { path: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

/// Which loop produced a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Search,
    Baseline,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub mode: Mode,
    pub seed: u64,
    pub budget_scale: f64,
    /// Resolved configuration, budget scale and seed already applied.
    pub config: Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub seed: u64,
    pub evaluations: usize,
    pub executions: usize,
    pub archive_size: usize,
    pub archive_violations: usize,
    pub archive_mean_fitness: f64,
    pub archive_mean_control_error: f64,
    pub archive_mean_mr_falsification: f64,
    pub analysis: AnalysisReport,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    mean_std(&v).0
}

fn create_dir(path: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(path)
        .map_err(|source| RunError::CreateDir { path: path.display().to_string(), source })
}

fn report_options(cfg: &Config) -> ReportOptions {
    ReportOptions {
        bins: cfg.analysis.bins,
        control_error_threshold: cfg.fitness.control_error_threshold,
        clip: cfg.analysis.clip,
    }
}

/// Runs one search or baseline with `cfg` as given.
pub fn execute(cfg: &Config, mode: Mode) -> Result<SearchOutcome, RunError> {
    cfg.validate()?;
    let grid = cfg.grid().map_err(|e| RunError::Usage(e.to_string()))?;
    let sut = cfg.sut()?;
    let problem = Problem { grid: &grid, sut: &sut, fitness: &cfg.fitness };
    Ok(match mode {
        Mode::Search => run_search(&cfg.search, &problem)?,
        Mode::Baseline => run_baseline(cfg.baseline_programs(), &cfg.search, &problem)?,
    })
}

pub fn report(cfg: &Config, mode: Mode, outcome: &SearchOutcome) -> RunReport {
    let points: Vec<EvalPoint> = outcome.evaluations.iter().map(EvalPoint::from).collect();
    let distances = outcome.archive.pairwise_distances();
    let members = outcome.archive.members();
    RunReport {
        mode,
        seed: cfg.search.seed,
        evaluations: outcome.evaluations.len(),
        executions: outcome.executions,
        archive_size: members.len(),
        archive_violations: outcome.archive.violations().len(),
        archive_mean_fitness: mean(members.iter().map(|m| m.eval.fitness)),
        archive_mean_control_error: mean(members.iter().map(|m| m.eval.control_error)),
        archive_mean_mr_falsification: mean(members.iter().map(|m| m.eval.mr_falsification)),
        analysis: summarize(&points, Some(&distances), &report_options(cfg)),
    }
}

/// Runs and writes `archive.jsonl`, `evals.csv`, `report.json`, `manifest.json` and, for a
/// search, `generations.csv` into `out`.
pub fn run_to_dir(
    cfg: &Config,
    mode: Mode,
    budget_scale: f64,
    out: &Path,
) -> Result<RunReport, RunError> {
    let outcome = execute(cfg, mode)?;
    create_dir(out)?;
    io::write_archive(&out.join("archive.jsonl"), &outcome.archive)?;
    io::write_evals(&out.join("evals.csv"), &outcome.evaluations)?;
    if mode == Mode::Search {
        io::write_generations(&out.join("generations.csv"), &outcome.generations)?;
    }
    let rep = report(cfg, mode, &outcome);
    io::write_json(&out.join("report.json"), &rep)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        mode,
        seed: cfg.search.seed,
        budget_scale,
        config: cfg.clone(),
    };
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std_dev: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Self {
        let (mean, std_dev) = mean_std(values);
        Self { mean, std_dev }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std_dev)
    }
}

/// Variability of archive means over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub archive_mean_fitness: MeanStd,
    pub archive_mean_control_error: MeanStd,
    pub archive_mean_mr_falsification: MeanStd,
    pub mean_fitness: MeanStd,
}

/// Runs every seed into `out/seed-<n>` and writes `summary.json`.
pub fn run_seeds(
    cfg: &Config,
    mode: Mode,
    budget_scale: f64,
    seeds: &[u64],
    out: &Path,
) -> Result<SeedSummary, RunError> {
    let mut reports = Vec::new();
    for &seed in seeds {
        let mut c = cfg.clone();
        c.search.seed = seed;
        reports.push(run_to_dir(&c, mode, budget_scale, &out.join(format!("seed-{seed}")))?);
    }
    let col = |f: fn(&RunReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    let summary = SeedSummary {
        mode,
        seeds: seeds.to_vec(),
        archive_mean_fitness: col(|r| r.archive_mean_fitness),
        archive_mean_control_error: col(|r| r.archive_mean_control_error),
        archive_mean_mr_falsification: col(|r| r.archive_mean_mr_falsification),
        mean_fitness: col(|r| r.analysis.fitness.mean),
    };
    io::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub control_error_threshold: f64,
    pub tolerance: f64,
    pub seeds: Vec<u64>,
    pub cells: Vec<TuneCell>,
    pub selection: Option<Selection>,
}

impl TuneReport {
    /// Rows of `c`, columns of `b`, each cell `ε_c / μ`; the selected cell is starred.
    pub fn table(&self) -> String {
        let mut s = String::from("c \\ b");
        for b in tune::BASES {
            s.push_str(&format!("\t{b:.3} (ε_c / μ)"));
        }
        s.push('\n');
        for (row, chunk) in self.cells.chunks(tune::BASES.len()).enumerate() {
            s.push_str(&format!("{:.4}", chunk[0].exponent_scale));
            for (col, cell) in chunk.iter().enumerate() {
                let mark = match self.selection {
                    Some(sel) if sel.index == row * tune::BASES.len() + col => "*",
                    _ => "",
                };
                s.push_str(&format!(
                    "\t{:.4} / {:.4}{mark}",
                    cell.mean_control_error, cell.mean_mr_falsification
                ));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Serialize)]
struct TuneRow {
    base: f64,
    exponent_scale: f64,
    mean_control_error: f64,
    mean_mr_falsification: f64,
    selected: bool,
}

/// Runs a search per grid cell and seed, averages the archive means and applies the
/// selection rule. Writes `tune.json` and `tune.csv` into `out`.
pub fn run_tune(cfg: &Config, seeds: &[u64], out: &Path) -> Result<TuneReport, RunError> {
    let th = cfg.fitness.control_error_threshold;
    let mut cells = Vec::new();
    for fitness in tune::grid(th) {
        let (mut ec, mut mu) = (Vec::new(), Vec::new());
        for &seed in seeds {
            let mut c = Config { fitness, ..cfg.clone() };
            c.search.seed = seed;
            let outcome = execute(&c, Mode::Search)?;
            for m in outcome.archive.members() {
                ec.push(m.eval.control_error);
                mu.push(m.eval.mr_falsification);
            }
        }
        cells.push(TuneCell {
            base: fitness.base,
            exponent_scale: fitness.exponent_scale,
            mean_control_error: mean_std(&ec).0,
            mean_mr_falsification: mean_std(&mu).0,
        });
    }
    let selection = tune::select(&cells, th, tune::DEFAULT_TOLERANCE);
    let report = TuneReport {
        control_error_threshold: th,
        tolerance: tune::DEFAULT_TOLERANCE,
        seeds: seeds.to_vec(),
        cells,
        selection,
    };
    create_dir(out)?;
    io::write_json(&out.join("tune.json"), &report)?;
    let path = out.join("tune.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|source| IoError::Csv { path: path.display().to_string(), source })?;
    for (i, cell) in report.cells.iter().enumerate() {
        let row = TuneRow {
            base: cell.base,
            exponent_scale: cell.exponent_scale,
            mean_control_error: cell.mean_control_error,
            mean_mr_falsification: cell.mean_mr_falsification,
            selected: report.selection.is_some_and(|s| s.index == i),
        };
        w.serialize(row)
            .map_err(|source| IoError::Csv { path: path.display().to_string(), source })?;
    }
    w.flush().map_err(|source| IoError::File { path: path.display().to_string(), source })?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub inputs: Vec<String>,
    pub reports: Vec<AnalysisReport>,
    /// First input against the second.
    pub comparison: Option<Comparison>,
}

/// Looks for `manifest.json` next to `evals`.
pub fn sibling_manifest(evals: &Path) -> Option<Manifest> {
    let path = evals.parent()?.join("manifest.json");
    path.exists().then(|| io::read_json(&path).ok()).flatten()
}

/// Distances between the realized inputs of archived programs (pairs `i < j`).
pub fn archive_distances(cfg: &Config, archive: &Path) -> Result<Vec<f64>, RunError> {
    let grid = cfg.grid().map_err(|e| RunError::Usage(e.to_string()))?;
    let mut inputs = Vec::new();
    for entry in io::read_archive(archive)? {
        let program: Program =
            entry.program.parse().map_err(|source| RunError::Program { id: entry.id, source })?;
        inputs.push(program.realize(&grid).map_err(AssessError::from)?.input);
    }
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        for j in i + 1..inputs.len() {
            out.push(distance(&inputs[i], &inputs[j]).expect("archive inputs share the grid"));
        }
    }
    Ok(out)
}

/// Summarizes one or two `evals.csv` files; the archive-distance histogram is added when an
/// `archive.jsonl` sits next to an input.
pub fn analyze(cfg: &Config, evals: &[PathBuf]) -> Result<AnalyzeReport, RunError> {
    if evals.is_empty() || evals.len() > 2 {
        return Err(RunError::Usage("analyze takes one or two evals.csv files".into()));
    }
    let mut sets = Vec::new();
    let mut reports = Vec::new();
    for path in evals {
        let rows = io::read_evals(path)?;
        let points: Vec<EvalPoint> = rows.iter().map(EvalPoint::from).collect();
        let archive = path.with_file_name("archive.jsonl");
        let distances =
            if archive.exists() { Some(archive_distances(cfg, &archive)?) } else { None };
        reports.push(summarize(&points, distances.as_deref(), &report_options(cfg)));
        sets.push(points);
    }
    let comparison = match sets.as_slice() {
        [a, b] => Some(compare(a, b)?),
        _ => None,
    };
    Ok(AnalyzeReport {
        inputs: evals.iter().map(|p| p.display().to_string()).collect(),
        reports,
        comparison,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayCheck {
    pub id: usize,
    pub stored_control_error: f64,
    pub stored_mr_falsification: f64,
    pub control_error: f64,
    pub mr_falsification: f64,
    pub matches: bool,
}

/// Equal within `tol`, treating identical non-finite values as equal.
fn close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol
}

/// Re-realizes and re-executes archive entries (all, or only `id`), writes
/// `<id>-input.csv`, `<id>-expected.csv` and `<id>-actual.csv` into `out` and compares the
/// metrics with the stored ones.
pub fn replay(
    cfg: &Config,
    archive: &Path,
    id: Option<usize>,
    out: &Path,
    tol: f64,
) -> Result<Vec<ReplayCheck>, RunError> {
    cfg.validate()?;
    let grid = cfg.grid().map_err(|e| RunError::Usage(e.to_string()))?;
    let sut = cfg.sut()?;
    let fitness: FitnessConfig = cfg.fitness;
    let entries: Vec<_> = io::read_archive(archive)?
        .into_iter()
        .filter(|e| id.is_none_or(|want| e.id == want))
        .collect();
    if entries.is_empty() {
        return Err(RunError::Usage(match id {
            Some(i) => format!("no archive entry with id {i} in {}", archive.display()),
            None => format!("{} has no entries", archive.display()),
        }));
    }
    create_dir(out)?;
    let mut cache = ExecutionCache::new();
    let mut checks = Vec::new();
    for entry in entries {
        let program: Program =
            entry.program.parse().map_err(|source| RunError::Program { id: entry.id, source })?;
        let eval = assess(&program, &grid, &sut, &mut cache, &fitness)?;
        io::write_trace(&out.join(format!("{}-input.csv", entry.id)), &eval.input)?;
        if let (Some(e), Some(y)) = (&eval.expected, &eval.actual) {
            io::write_trace(&out.join(format!("{}-expected.csv", entry.id)), e)?;
            io::write_trace(&out.join(format!("{}-actual.csv", entry.id)), y)?;
        }
        checks.push(ReplayCheck {
            id: entry.id,
            stored_control_error: entry.control_error,
            stored_mr_falsification: entry.mr_falsification,
            control_error: eval.control_error,
            mr_falsification: eval.mr_falsification,
            matches: close(entry.control_error, eval.control_error, tol)
                && close(entry.mr_falsification, eval.mr_falsification, tol),
        });
    }
    Ok(checks)
}
