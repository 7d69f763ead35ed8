use std::path::Path;
use std::process::{Command, Output};

use mrgp::io;
use mrgp::run::{AnalyzeReport, Manifest};
use mrgp::Config;

fn mrgp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrgp")).args(args).current_dir(cwd).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &[&str] = &["--preset", "sat2", "--budget-scale", "0.05"];

fn run_tiny(cmd: &str, out: &str, seed: &str, cwd: &Path) -> Output {
    let mut args = vec![cmd, "--seed", seed, "--out", out];
    args.extend_from_slice(TINY);
    let o = mrgp(&args, cwd);
    assert!(o.status.success(), "{}", stderr(&o));
    o
}

#[test]
fn search_writes_all_artifacts_into_a_new_directory() {
    let dir = tempfile::tempdir().unwrap();
    run_tiny("search", "nested/run", "4", dir.path());
    let out = dir.path().join("nested/run");
    for f in ["archive.jsonl", "evals.csv", "generations.csv", "report.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest: Manifest = io::read_json(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.seed, 4);
    assert_eq!(manifest.config.search.seed, 4);
    assert_eq!(manifest.config.search.offspring, 4);
    let rows = io::read_evals(&out.join("evals.csv")).unwrap();
    assert!(rows.iter().all(|r| r.diverged || r.executions == r.terminals + 1));
}

#[test]
fn baseline_has_no_generation_log() {
    let dir = tempfile::tempdir().unwrap();
    run_tiny("baseline", "b", "1", dir.path());
    let out = dir.path().join("b");
    assert!(!out.join("generations.csv").exists());
    // 2 generations × 4 offspring at this scale.
    assert_eq!(io::read_evals(&out.join("evals.csv")).unwrap().len(), 8);
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    run_tiny("search", "a", "9", dir.path());
    run_tiny("search", "b", "9", dir.path());
    for f in ["archive.jsonl", "evals.csv", "generations.csv", "report.json", "manifest.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn replay_reproduces_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    run_tiny("search", "s", "2", dir.path());
    let o = mrgp(&["replay", "s/archive.jsonl", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let first = io::read_archive(&dir.path().join("s/archive.jsonl")).unwrap()[0].clone();
    for suffix in ["input", "expected", "actual"] {
        let t = io::read_trace(&dir.path().join(format!("r/{}-{suffix}.csv", first.id))).unwrap();
        assert_eq!(t.k_max(), 500);
    }

    let path = dir.path().join("s/archive.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let line = text.lines().next().unwrap();
    let mut entry: io::ArchiveEntry = serde_json::from_str(line).unwrap();
    entry.mr_falsification += 1e-6;
    std::fs::write(&path, text.replacen(line, &serde_json::to_string(&entry).unwrap(), 1)).unwrap();
    let id = entry.id.to_string();
    let o = mrgp(&["replay", "s/archive.jsonl", "--id", &id, "--out", "r2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mismatch"));
}

#[test]
fn replay_uses_an_explicit_config() {
    let dir = tempfile::tempdir().unwrap();
    run_tiny("search", "s", "3", dir.path());
    let manifest: Manifest = io::read_json(&dir.path().join("s/manifest.json")).unwrap();
    std::fs::write(dir.path().join("cfg.toml"), manifest.config.to_toml()).unwrap();
    let o = mrgp(&["replay", "s/archive.jsonl", "--config", "cfg.toml", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    // A different subject no longer reproduces the stored metrics.
    let o = mrgp(&["replay", "s/archive.jsonl", "--preset", "lti2", "--out", "r"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_identical_inputs_gives_p_one() {
    let dir = tempfile::tempdir().unwrap();
    run_tiny("search", "s", "5", dir.path());
    let o = mrgp(&["analyze", "s/evals.csv", "s/evals.csv", "--out", "an"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report: AnalyzeReport = io::read_json(&dir.path().join("an/analysis.json")).unwrap();
    let c = report.comparison.unwrap();
    assert_eq!(c.fitness.p, 1.0);
    assert_eq!(c.control_error.p, 1.0);
    assert_eq!(c.mr_falsification.p, 1.0);
    assert_eq!(report.reports.len(), 2);
    assert!(report.reports[0].archive_distance_histogram.is_some());
}

#[test]
fn seed_range_runs_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["search", "--seeds", "1..3", "--out", "m"];
    args.extend_from_slice(TINY);
    let o = mrgp(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("±"));
    for s in 1..=3 {
        assert!(dir.path().join(format!("m/seed-{s}/evals.csv")).exists());
    }
    let summary: mrgp::run::SeedSummary =
        io::read_json(&dir.path().join("m/summary.json")).unwrap();
    assert_eq!(summary.seeds, vec![1, 2, 3]);
}

#[test]
fn tune_covers_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["tune", "--out", "t"];
    args.extend_from_slice(TINY);
    let o = mrgp(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("selected b ="));
    let report: mrgp::run::TuneReport = io::read_json(&dir.path().join("t/tune.json")).unwrap();
    assert_eq!(report.cells.len(), 9);
    assert!(report.selection.is_some());
    let csv = std::fs::read_to_string(dir.path().join("t/tune.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[search]\ntournament_size = 0\n").unwrap();
    let o = mrgp(&["search", "--config", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("search.tournament_size"), "{}", stderr(&o));

    std::fs::write(dir.path().join("typo.toml"), "[fitness]\nbse = 2.0\n").unwrap();
    let o = mrgp(&["search", "--config", "typo.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bse"), "{}", stderr(&o));

    let o = mrgp(&["search", "--config", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mrgp(&["search", "--budget-scale", "abc"], dir.path()).status.code(), Some(1));
    assert_eq!(mrgp(&["analyze"], dir.path()).status.code(), Some(1));
    assert_eq!(mrgp(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn written_config_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    let cfg = Config::preset("engine1").unwrap();
    std::fs::write(&path, cfg.to_toml()).unwrap();
    assert_eq!(Config::load(&path).unwrap(), cfg);
}
