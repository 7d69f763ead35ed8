//! Output files written by every run and read back by `analyze` and `replay`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use mrgp_core::search::{Archive, EvalRecord, GenerationStats};
use mrgp_core::stats::EvalPoint;
use mrgp_core::Trace;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.display().to_string(), source }
}

/// One row of `evals.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: usize,
    pub generation: usize,
    pub origin: String,
    pub fitness: f64,
    pub mr_falsification: f64,
    pub control_error: f64,
    pub executions: usize,
    pub terminals: usize,
    pub diverged: bool,
    pub program: String,
}

impl From<&EvalRecord> for EvalRow {
    fn from(r: &EvalRecord) -> Self {
        Self {
            id: r.id,
            generation: r.generation,
            origin: r.origin.name().into(),
            fitness: r.fitness,
            mr_falsification: r.mr_falsification,
            control_error: r.control_error,
            executions: r.executions,
            terminals: r.terminals,
            diverged: r.diverged,
            program: r.program.to_string(),
        }
    }
}

impl From<&EvalRow> for EvalPoint {
    fn from(r: &EvalRow) -> Self {
        EvalPoint {
            fitness: r.fitness,
            mr_falsification: r.mr_falsification,
            control_error: r.control_error,
            diverged: r.diverged,
        }
    }
}

pub fn write_evals(path: &Path, records: &[EvalRecord]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in records {
        w.serialize(EvalRow::from(r)).map_err(csv_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

pub fn read_evals(path: &Path) -> Result<Vec<EvalRow>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

pub fn write_generations(path: &Path, stats: &[GenerationStats]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for s in stats {
        w.serialize(s).map_err(csv_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

/// One line of `archive.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub id: usize,
    pub program: String,
    pub fitness: f64,
    pub mr_falsification: f64,
    pub control_error: f64,
}

pub fn write_archive(path: &Path, archive: &Archive) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    for m in archive.members() {
        let entry = ArchiveEntry {
            id: m.id,
            program: m.program.to_string(),
            fitness: m.eval.fitness,
            mr_falsification: m.eval.mr_falsification,
            control_error: m.eval.control_error,
        };
        let line = serde_json::to_string(&entry)
            .map_err(|source| IoError::Json { path: path.display().to_string(), source })?;
        writeln!(w, "{line}").map_err(file_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

pub fn read_archive(path: &Path) -> Result<Vec<ArchiveEntry>, IoError> {
    let reader = BufReader::new(File::open(path).map_err(file_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(file_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| IoError::Format {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Writes a trace as `t,dim0,dim1,...` with `t = k · dt`.
pub fn write_trace(path: &Path, trace: &Trace) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["t".to_string()];
    header.extend((0..trace.n_dim()).map(|d| format!("dim{d}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for k in 0..trace.k_max() {
        let mut row = vec![(k as f64 * trace.dt()).to_string()];
        row.extend((0..trace.n_dim()).map(|d| trace.get(d, k).to_string()));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

/// Reads a file written by [`write_trace`]; `dt` is taken from the first two time stamps.
pub fn read_trace(path: &Path) -> Result<Trace, IoError> {
    let bad = |line: usize, message: String| IoError::Format {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let n_dim = r.headers().map_err(csv_err(path))?.len().saturating_sub(1);
    let mut times = Vec::new();
    let mut channels = vec![Vec::new(); n_dim];
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let values: Vec<f64> = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| bad(i + 2, format!("`{v}`: {e}"))))
            .collect::<Result<_, _>>()?;
        times.push(values[0]);
        for (c, v) in channels.iter_mut().zip(&values[1..]) {
            c.push(*v);
        }
    }
    let dt = match times.as_slice() {
        [a, b, ..] => b - a,
        _ => return Err(bad(2, "need at least two samples".into())),
    };
    Trace::from_channels(dt, channels).map_err(|e| bad(1, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| IoError::Json { path: path.display().to_string(), source })?;
    text.push('\n');
    std::fs::write(path, text).map_err(file_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text)
        .map_err(|source| IoError::Json { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = Trace::from_fn(2, 5, 0.02, |d, k| d as f64 - 0.1 * k as f64).unwrap();
        write_trace(&path, &t).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,dim0,dim1\n0,0,1\n"));
        let back = read_trace(&path).unwrap();
        assert_eq!(back.samples(), t.samples());
        assert!((back.dt() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn rows_with_infinite_metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("evals.csv");
        let rec = EvalRecord {
            id: 3,
            generation: 1,
            origin: mrgp_core::search::Origin::Mutation,
            program: "(TS 2 (TRC step 0 1 2 3))".parse().unwrap(),
            fitness: 0.0,
            mr_falsification: f64::INFINITY,
            control_error: f64::INFINITY,
            executions: 2,
            terminals: 1,
            diverged: true,
        };
        write_evals(&path, std::slice::from_ref(&rec)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "id,generation,origin,fitness,mr_falsification,control_error,executions,terminals,diverged,program\n"
        ));
        let rows = read_evals(&path).unwrap();
        assert_eq!(rows, vec![EvalRow::from(&rec)]);
    }
}
