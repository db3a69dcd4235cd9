//! Versioned TOML configuration shared by every command.
//!
//! ```toml
//! version = 1
//!
//! [scenario]
//! kind = "scenario3d"
//! n_train = 1000
//! n_total = 1500
//! change_at = 1200
//!
//! [[detector]]
//! kind = "matrix"
//! window = 100
//!
//! [calibration]
//! alpha = 0.05
//! permutations = 200
//!
//! [experiment]
//! replications = 100
//!
//! [output]
//! path = "report.csv"
//! ```

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::DEFAULT_PERMUTATIONS;
use crate::embedding::RescaleStats;
use crate::error::{Error, Result};
use crate::events::{read_raw, split_and_rescale, IngestOptions, Ingested};
use crate::harness::{DetectorSpec, ExperimentSpec};
use crate::sim::Scenario;

/// The only schema version understood.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_permutations() -> usize {
    DEFAULT_PERMUTATIONS
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            permutations: default_permutations(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// `0` uses every core.
    #[serde(default)]
    pub workers: usize,
    /// Sweep multipliers, ascending; fifteen log-spaced values when absent.
    #[serde(default)]
    pub multipliers: Option<Vec<f64>>,
}

fn default_replications() -> usize {
    100
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            replications: default_replications(),
            seed: 0,
            workers: 0,
            multipliers: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Main output: events for `simulate`, report for `run`, curve for `sweep`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Calibration report written by `calibrate` and read by `detect`.
    #[serde(default)]
    pub calibration: Option<PathBuf>,
}

/// Event-file input for `calibrate` and `detect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub events: PathBuf,
    #[serde(default = "default_window_column")]
    pub window_column: String,
    /// Coordinate columns; every other column when empty.
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default = "default_training_fraction")]
    pub training_fraction: f64,
    /// Treat coordinates as already in `[0,1]` instead of rescaling by the
    /// training range.
    #[serde(default)]
    pub unit_bounds: bool,
}

fn default_window_column() -> String {
    "window".into()
}

fn default_training_fraction() -> f64 {
    0.5
}

impl InputSection {
    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            window_column: self.window_column.clone(),
            coordinate_columns: self.columns.clone(),
            training_fraction: self.training_fraction,
            bounds: None,
        }
    }

    /// Reads the event file and splits it into training and stream windows.
    pub fn ingest(&self) -> Result<Ingested> {
        let mut opts = self.ingest_options();
        let file = File::open(&self.events)?;
        let raw = read_raw(BufReader::new(file), &opts)?;
        if self.unit_bounds {
            opts.bounds = Some(RescaleStats::new(vec![0.0; raw.dim], vec![1.0; raw.dim])?);
        }
        split_and_rescale(&raw, &opts)
    }
}

/// Per-step latency benchmark on a no-change stream of the configured
/// scenario kind. Step ranges count steps after the training prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default = "default_early")]
    pub early: [usize; 2],
    #[serde(default = "default_late")]
    pub late: [usize; 2],
}

fn default_early() -> [usize; 2] {
    [1_000, 2_000]
}

fn default_late() -> [usize; 2] {
    [10_000, 11_000]
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            early: default_early(),
            late: default_late(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default, rename = "detector")]
    pub detectors: Vec<DetectorSpec>,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub input: Option<InputSection>,
    #[serde(default)]
    pub bench: BenchSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (this build reads version {CONFIG_VERSION})",
                self.version
            )));
        }
        if let Some(sc) = &self.scenario {
            sc.validate()
                .map_err(|e| Error::Config(format!("[scenario]: {e}")))?;
        }
        let cal = &self.calibration;
        if !(cal.alpha > 0.0 && cal.alpha < 1.0) {
            return Err(Error::Config(format!(
                "[calibration] alpha = {} must lie in (0, 1)",
                cal.alpha
            )));
        }
        if cal.permutations < 1 {
            return Err(Error::Config("[calibration] permutations must be at least 1".into()));
        }
        if self.experiment.replications < 1 {
            return Err(Error::Config("[experiment] replications must be at least 1".into()));
        }
        if let Some(m) = &self.experiment.multipliers {
            if m.is_empty() || m.windows(2).any(|p| p[0] > p[1]) || m.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Config(
                    "[experiment] multipliers must be a nonempty ascending list of nonnegative numbers"
                        .into(),
                ));
            }
        }
        if let Some(input) = &self.input {
            if !(input.training_fraction > 0.0 && input.training_fraction < 1.0) {
                return Err(Error::Config(
                    "[input] training_fraction must lie in (0, 1)".into(),
                ));
            }
        }
        for (name, [a, b]) in [("early", self.bench.early), ("late", self.bench.late)] {
            if a < 1 || a >= b {
                return Err(Error::Config(format!(
                    "[bench] {name} must be [start, end] with 1 ≤ start < end"
                )));
            }
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<&Scenario> {
        self.scenario
            .as_ref()
            .ok_or_else(|| Error::Config("missing [scenario] section".into()))
    }

    /// First detector of kind `matrix`.
    pub fn matrix_detector(&self) -> Result<&DetectorSpec> {
        self.detectors
            .iter()
            .find(|d| matches!(d, DetectorSpec::Matrix { .. }))
            .ok_or_else(|| Error::Config("no [[detector]] with kind = \"matrix\"".into()))
    }

    /// Experiment built from the scenario, detectors and sections, with
    /// optional command-line overrides.
    pub fn experiment_spec(&self, seed: Option<u64>, workers: Option<usize>) -> Result<ExperimentSpec> {
        let spec = ExperimentSpec {
            scenario: self.scenario()?.clone(),
            detectors: self.detectors.clone(),
            replications: self.experiment.replications,
            alpha: self.calibration.alpha,
            permutations: self.calibration.permutations,
            seed: seed.unwrap_or(self.experiment.seed),
            workers: workers.unwrap_or(self.experiment.workers),
        };
        spec.validate()?;
        Ok(spec)
    }
}
