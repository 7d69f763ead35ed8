//! Run configuration: one TOML file with a section per concern.
//!
//! ```toml
//! [plant]
//! kind = "sat2"
//!
//! [subject]
//! range = [[-2.0, 2.0], [-2.0, 2.0]]
//! test_duration = 10.0
//! warm_up = 3.0
//! dt = 0.02
//! amplitude = [0.2, 0.2]
//!
//! [fitness]
//! base = 2.718281828459045
//! exponent_scale = 6.66
//! control_error_threshold = 0.15
//!
//! [search]
//! population = 50
//! offspring = 80
//! generations = 40
//! similarity_threshold = 0.2
//! seed = 1
//! ```
//!
//! Every section and key is optional; missing ones take the values of the `sat2` preset.

use std::path::Path;

use mrgp_core::fitness::FitnessConfig;
use mrgp_core::mrprog::{GridError, TraceGrid};
use mrgp_core::search::{SearchConfig, SearchConfigError};
use mrgp_core::sut::{PlantConfig, SutModel};
use mrgp_core::AmplitudeRange;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown preset `{0}` (expected one of: lti2, sat2, quad1d, engine1)")]
    UnknownPreset(String),
}

impl ConfigError {
    fn invalid(field: impl Into<String>, message: impl ToString) -> Self {
        ConfigError::Invalid { field: field.into(), message: message.to_string() }
    }
}

/// Signal range and test window of the subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubjectConfig {
    /// Valid `[min, max]` reference values per input dimension.
    pub range: AmplitudeRange,
    /// Seconds per test, warm-up included.
    pub test_duration: f64,
    pub warm_up: f64,
    pub dt: f64,
    /// Amplitude of the initial patterns per dimension.
    pub amplitude: Vec<f64>,
}

impl Default for SubjectConfig {
    fn default() -> Self {
        Self {
            range: AmplitudeRange::uniform(2, -2.0, 2.0).expect("valid range"),
            test_duration: 10.0,
            warm_up: 3.0,
            dt: 0.02,
            amplitude: vec![0.2, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Random programs to assess; by default as many as the search could breed
    /// (`generations × offspring`).
    pub programs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub bins: usize,
    /// Clip control-error and MR-falsification histograms to `[0, clip]`.
    pub clip: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { bins: 30, clip: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub plant: PlantConfig,
    pub subject: SubjectConfig,
    pub fitness: FitnessConfig,
    pub search: SearchConfig,
    pub baseline: BaselineConfig,
    pub analysis: AnalysisConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config::preset("sat2").expect("built-in preset")
    }
}

impl Config {
    /// Built-in subjects. `lti2`, `sat2` and `quad1d` share the two-axis position-control
    /// window; `engine1` uses an engine-speed window.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let plant =
            PlantConfig::by_name(name).ok_or_else(|| ConfigError::UnknownPreset(name.into()))?;
        let position = || Config {
            plant: plant.clone(),
            subject: SubjectConfig::default(),
            fitness: FitnessConfig {
                base: std::f64::consts::E,
                exponent_scale: 6.66,
                control_error_threshold: 0.15,
            },
            search: SearchConfig { similarity_threshold: 0.2, seed: 1, ..SearchConfig::default() },
            baseline: BaselineConfig::default(),
            analysis: AnalysisConfig { bins: 30, clip: Some(0.6) },
        };
        Ok(match name {
            "engine1" => Config {
                subject: SubjectConfig {
                    range: AmplitudeRange::uniform(1, 1200.0, 6000.0).expect("valid range"),
                    test_duration: 50.0,
                    warm_up: 1.5,
                    dt: 0.05,
                    amplitude: vec![500.0],
                },
                fitness: FitnessConfig {
                    base: 1.5,
                    exponent_scale: 5.0 / 75.0,
                    control_error_threshold: 75.0,
                },
                search: SearchConfig {
                    similarity_threshold: 300.0,
                    seed: 1,
                    ..SearchConfig::default()
                },
                analysis: AnalysisConfig { bins: 30, clip: None },
                ..position()
            },
            _ => position(),
        })
    }

    /// Parses TOML text; `origin` names the source in error messages.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: origin.into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Checks every section; the error names the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.plant.validate().map_err(|e| ConfigError::invalid("plant", e))?;
        let s = &self.subject;
        if s.amplitude.len() != s.range.n_dim() {
            return Err(ConfigError::invalid(
                "subject.amplitude",
                format!("{} entries for {} range dimensions", s.amplitude.len(), s.range.n_dim()),
            ));
        }
        self.grid().map_err(|e| {
            let field = match &e {
                GridError::NotPositive { field } => format!("subject.{field}"),
                GridError::WarmUpTooLong { .. } => "subject.warm_up".into(),
                GridError::AmplitudeDims { .. } | GridError::AmplitudeTooLarge { .. } => {
                    "subject.amplitude".into()
                }
            };
            ConfigError::invalid(field, e)
        })?;
        self.fitness.validate().map_err(|e| {
            use mrgp_core::fitness::FitnessConfigError as F;
            let field = match e {
                F::Base(_) => "fitness.base",
                F::ExponentScale(_) => "fitness.exponent_scale",
                F::Threshold(_) => "fitness.control_error_threshold",
            };
            ConfigError::invalid(field, e)
        })?;
        self.search.validate().map_err(|e| {
            let field = match &e {
                SearchConfigError::Zero(name) => format!("search.{name}"),
                SearchConfigError::Rates => "search.crossover_rate".into(),
                SearchConfigError::PopulationAboveOffspring { .. } => "search.population".into(),
                SearchConfigError::Threshold => "search.similarity_threshold".into(),
                SearchConfigError::Depth(d) if *d == self.search.init_depth => {
                    "search.init_depth".into()
                }
                SearchConfigError::Depth(_) => "search.mutation_depth".into(),
            };
            ConfigError::invalid(field, e)
        })?;
        if self.baseline.programs == Some(0) {
            return Err(ConfigError::invalid("baseline.programs", "must be at least 1"));
        }
        if self.analysis.bins == 0 {
            return Err(ConfigError::invalid("analysis.bins", "must be at least 1"));
        }
        if let Some(c) = self.analysis.clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(ConfigError::invalid("analysis.clip", "must be positive and finite"));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TraceGrid, GridError> {
        let s = &self.subject;
        TraceGrid::new(s.test_duration, s.warm_up, s.dt, s.amplitude.clone(), s.range.clone())
    }

    pub fn sut(&self) -> Result<SutModel, ConfigError> {
        let s = &self.subject;
        SutModel::from_plant(&self.plant, s.range.clone(), s.warm_up, s.dt)
            .map_err(|e| ConfigError::invalid("plant", e))
    }

    /// Applies a budget scale to the search sizes (see [`SearchConfig::scaled`]).
    pub fn scaled(&self, factor: f64) -> Result<Self, ConfigError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(ConfigError::invalid("--budget-scale", "must be positive and finite"));
        }
        Ok(Config { search: self.search.scaled(factor), ..self.clone() })
    }

    pub fn baseline_programs(&self) -> usize {
        self.baseline.programs.unwrap_or((self.search.generations * self.search.offspring).max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in ["lti2", "sat2", "quad1d", "engine1"] {
            let cfg = Config::preset(name).unwrap();
            cfg.validate().unwrap();
            let again = Config::from_toml(&cfg.to_toml(), name).unwrap();
            assert_eq!(again, cfg, "{name}");
            assert_eq!(again.to_toml(), cfg.to_toml());
        }
    }

    #[test]
    fn position_preset_window() {
        let cfg = Config::preset("quad1d").unwrap();
        assert_eq!(cfg.subject.test_duration, 10.0);
        assert_eq!(cfg.subject.warm_up, 3.0);
        assert_eq!(cfg.subject.amplitude, vec![0.2, 0.2]);
        assert_eq!(cfg.subject.range.bounds(), &[(-2.0, 2.0), (-2.0, 2.0)]);
        assert_eq!(cfg.fitness.control_error_threshold, 0.15);
        assert_eq!(cfg.search.similarity_threshold, 0.2);
        assert_eq!(cfg.baseline_programs(), 3200);
    }

    #[test]
    fn empty_file_is_the_default_preset() {
        assert_eq!(Config::from_toml("", "empty").unwrap(), Config::default());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = Config::from_toml("[search]\ngenerations = 3\n[plant]\nkind = \"lti2\"\n", "t")
            .unwrap();
        assert_eq!(cfg.search.generations, 3);
        assert_eq!(cfg.search.offspring, 80);
        assert_eq!(cfg.plant, PlantConfig::by_name("lti2").unwrap());
    }

    #[test]
    fn nested_plant_parameters() {
        let text = "[plant]\nkind = \"sat2\"\n[plant.limits]\neffort = 12.0\n";
        let cfg = Config::from_toml(text, "t").unwrap();
        match cfg.plant {
            PlantConfig::Sat2(p) => {
                assert_eq!(p.limits.effort, 12.0);
                assert_eq!(p.limits.rate, 300.0);
            }
            other => panic!("{other:?}"),
        }
    }

    fn field_of(text: &str) -> String {
        match Config::from_toml(text, "t").unwrap_err() {
            ConfigError::Invalid { field, .. } => field,
            ConfigError::Parse { message, .. } => message,
            other => panic!("{other}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of("[search]\npopulation = 0\n"), "search.population");
        assert_eq!(field_of("[search]\npopulation = 90\n"), "search.population");
        assert_eq!(field_of("[search]\ninit_depth = [5, 2]\n"), "search.init_depth");
        assert_eq!(field_of("[fitness]\nbase = 0.5\n"), "fitness.base");
        assert_eq!(field_of("[subject]\namplitude = [0.2]\n"), "subject.amplitude");
        assert_eq!(field_of("[subject]\namplitude = [3.0, 0.2]\n"), "subject.amplitude");
        assert_eq!(field_of("[subject]\nwarm_up = 20.0\n"), "subject.warm_up");
        assert_eq!(field_of("[analysis]\nbins = 0\n"), "analysis.bins");
        assert!(field_of("[search]\npopulaton = 3\n").contains("populaton"));
        assert!(field_of("[plant]\nkind = \"lti2\"\nmas = 3.0\n").contains("mas"));
        assert!(field_of("[plant]\nkind = \"warp\"\n").contains("warp"));
    }

    #[test]
    fn budget_scale() {
        let cfg = Config::default().scaled(0.25).unwrap();
        assert_eq!(
            (cfg.search.population, cfg.search.offspring, cfg.search.generations),
            (13, 20, 10)
        );
        assert_eq!(cfg.baseline_programs(), 200);
        assert!(Config::default().scaled(0.0).is_err());
    }
}
