//! Monte Carlo experiments: per-replication calibration and detection,
//! outcome classification, metric aggregation and threshold sweeps.

use std::fmt::Write as _;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{calibrate_baseline, BaselineConfig, BaselineKind, KieDetector, MmdDetector};
use crate::calibration::{
    calibrate, calibrate_threshold_1d, scan_threshold_1d, CalibrationSettings, ThresholdMethod,
    DEFAULT_GAMMA,
};
use crate::detector::{Detector1d, Detector1dConfig, DetectorConfig, MatrixDetector};
use crate::embedding::{CoordinateSplit, PointWindow};
use crate::error::{Error, Result};
use crate::sim::{derive_seed, Scenario};

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

fn default_matrix_window() -> usize {
    100
}

fn default_baseline_window() -> usize {
    10
}

/// One detector of an experiment. Thresholds are calibrated on every
/// replication's training prefix unless a fixed value is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorSpec {
    Matrix {
        #[serde(default = "default_matrix_window")]
        window: usize,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default)]
        split: Option<CoordinateSplit>,
        #[serde(default)]
        rank: Option<usize>,
        #[serde(default)]
        method: ThresholdMethod,
        #[serde(default)]
        threshold_const: Option<f64>,
    },
    Matrix1d {
        #[serde(default = "default_matrix_window")]
        window: usize,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default)]
        method: ThresholdMethod,
        #[serde(default)]
        threshold_const: Option<f64>,
    },
    Mmd {
        #[serde(default = "default_baseline_window")]
        window: usize,
        #[serde(default)]
        bandwidth: Option<f64>,
        #[serde(default)]
        threshold: Option<f64>,
    },
    Kie {
        #[serde(default = "default_baseline_window")]
        window: usize,
        #[serde(default)]
        bandwidth: Option<f64>,
        #[serde(default)]
        grid_res: Option<usize>,
        #[serde(default)]
        threshold: Option<f64>,
    },
}

impl DetectorSpec {
    pub fn matrix(window: usize) -> Self {
        Self::Matrix {
            window,
            gamma: DEFAULT_GAMMA,
            split: None,
            rank: None,
            method: ThresholdMethod::Scan,
            threshold_const: None,
        }
    }

    pub fn matrix_1d(window: usize) -> Self {
        Self::Matrix1d {
            window,
            gamma: DEFAULT_GAMMA,
            method: ThresholdMethod::Scan,
            threshold_const: None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Matrix { .. } => "matrix",
            Self::Matrix1d { .. } => "matrix_1d",
            Self::Mmd { .. } => "mmd",
            Self::Kie { .. } => "kie",
        }
    }

    pub fn window(&self) -> usize {
        match self {
            Self::Matrix { window, .. }
            | Self::Matrix1d { window, .. }
            | Self::Mmd { window, .. }
            | Self::Kie { window, .. } => *window,
        }
    }

    pub fn validate(&self, n_train: usize) -> Result<()> {
        let w = self.window();
        let need = match self {
            Self::Matrix { .. } | Self::Matrix1d { .. } => w.max(2),
            Self::Mmd { .. } | Self::Kie { .. } => 2 * w.max(1),
        };
        if w < 1 || need > n_train {
            return Err(Error::Config(format!(
                "{} window {w} does not fit {n_train} training windows",
                self.label()
            )));
        }
        match self {
            Self::Matrix { gamma, .. } | Self::Matrix1d { gamma, .. } if !(*gamma > 0.0) => {
                Err(Error::Config(format!("{}: gamma must be > 0", self.label())))
            }
            Self::Mmd { .. } | Self::Kie { .. } => self.baseline_config(0.0, 0)?.validate(),
            _ => Ok(()),
        }
    }

    fn baseline_config(&self, threshold: f64, seed: u64) -> Result<BaselineConfig> {
        let (kind, window, bandwidth, grid_res) = match self {
            Self::Mmd {
                window, bandwidth, ..
            } => (BaselineKind::Mmd, *window, *bandwidth, None),
            Self::Kie {
                window,
                bandwidth,
                grid_res,
                ..
            } => (BaselineKind::Kie, *window, *bandwidth, *grid_res),
            _ => return Err(Error::Config("not a baseline detector".into())),
        };
        Ok(BaselineConfig {
            kind,
            bandwidth,
            grid_res,
            window,
            threshold,
            seed,
        })
    }
}

/// Everything needed to run a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub detectors: Vec<DetectorSpec>,
    pub replications: usize,
    pub alpha: f64,
    pub permutations: usize,
    pub seed: u64,
    /// Worker threads; `0` uses every available core.
    pub workers: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.replications < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.detectors.is_empty() {
            return Err(Error::Config("no detectors configured".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.permutations < 1 {
            return Err(Error::Config("permutations must be at least 1".into()));
        }
        for (i, d) in self.detectors.iter().enumerate() {
            d.validate(self.scenario.n_train)?;
            if self.detectors[..i].iter().any(|e| e.label() == d.label()) {
                return Err(Error::Config(format!("detector `{}` listed twice", d.label())));
            }
            if matches!(d, DetectorSpec::Matrix1d { .. }) != (self.scenario.dim() == 1) {
                return Err(Error::Config(format!(
                    "detector `{}` does not match scenario dimension {}",
                    d.label(),
                    self.scenario.dim()
                )));
            }
        }
        Ok(())
    }

    /// Scenario of replication `rep`.
    pub fn replication_scenario(&self, rep: usize) -> Scenario {
        Scenario {
            seed: derive_seed(self.seed, rep as u64),
            ..self.scenario.clone()
        }
    }
}

/// A detector's trajectory on one stream: the calibrated threshold and the
/// per-step statistic compared against it. For the matrix detectors the
/// statistic is the largest score-to-threshold-shape ratio over offsets, so
/// the detector alarms at the first step whose statistic exceeds the
/// constant, exactly as a direct run would.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub threshold: f64,
    pub statistics: Vec<f64>,
}

impl Trajectory {
    /// Position (0-based) of the first exceedance of `multiplier × threshold`.
    pub fn first_exceedance(&self, multiplier: f64) -> Option<usize> {
        let level = multiplier * self.threshold;
        self.statistics.iter().position(|&s| s > level)
    }
}

/// All detector trajectories of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub trajectories: Vec<Trajectory>,
}

/// A detector initialized on the training prefix with its threshold set.
#[derive(Debug, Clone)]
enum Armed {
    Matrix(MatrixDetector),
    Matrix1d(Detector1d),
    Mmd(MmdDetector),
    Kie(KieDetector),
}

impl Armed {
    fn statistic(&mut self, w: &PointWindow) -> Result<f64> {
        match self {
            Self::Matrix(d) => d.step_peak(w),
            Self::Matrix1d(d) => d.step_peak(w),
            Self::Mmd(d) => d.step_statistic(w),
            Self::Kie(d) => d.step_statistic(w),
        }
    }
}

fn arm(
    spec: &DetectorSpec,
    training: &[PointWindow],
    alpha: f64,
    permutations: usize,
    seed: u64,
) -> Result<(Armed, f64)> {
    match spec {
        DetectorSpec::Matrix {
            window,
            gamma,
            split,
            rank,
            method,
            threshold_const,
        } => {
            let mut config = match (threshold_const, split, rank) {
                (Some(c), Some(s), Some(r)) => DetectorConfig {
                    gamma: *gamma,
                    split: s.clone(),
                    rank: *r,
                    window: *window,
                    threshold_const: *c,
                },
                _ => {
                    let settings = CalibrationSettings {
                        gamma: *gamma,
                        window: *window,
                        alpha,
                        permutations,
                        seed,
                        split: split.clone(),
                        rank: *rank,
                        method: *method,
                    };
                    calibrate(training, &settings)?.detector_config()
                }
            };
            if let Some(c) = threshold_const {
                config.threshold_const = *c;
            }
            let c = config.threshold_const;
            Ok((Armed::Matrix(MatrixDetector::new(config, training)?), c))
        }
        DetectorSpec::Matrix1d {
            window,
            gamma,
            method,
            threshold_const,
        } => {
            let c = match (threshold_const, method) {
                (Some(c), _) => *c,
                (None, ThresholdMethod::Scan) => {
                    scan_threshold_1d(training, *gamma, *window, alpha, permutations, seed)?
                }
                (None, ThresholdMethod::HalfSplit) => {
                    calibrate_threshold_1d(training, *gamma, *window, alpha, permutations, seed)?
                }
            };
            let config = Detector1dConfig {
                gamma: *gamma,
                window: *window,
                threshold_const: c,
            };
            Ok((Armed::Matrix1d(Detector1d::new(config, training)?), c))
        }
        DetectorSpec::Mmd { threshold, .. } | DetectorSpec::Kie { threshold, .. } => {
            let mut config = spec.baseline_config(0.0, seed)?;
            config.threshold = match threshold {
                Some(t) => *t,
                None => calibrate_baseline(training, &config, alpha, permutations)?,
            };
            let t = config.threshold;
            let armed = if config.kind == BaselineKind::Mmd {
                Armed::Mmd(MmdDetector::new(config, training)?)
            } else {
                Armed::Kie(KieDetector::new(config, training)?)
            };
            Ok((armed, t))
        }
    }
}

fn run_armed(armed: &Armed, threshold: f64, stream: &[PointWindow]) -> Result<Trajectory> {
    let mut det = armed.clone();
    let statistics = stream.iter().map(|w| det.statistic(w)).collect::<Result<_>>()?;
    Ok(Trajectory {
        threshold,
        statistics,
    })
}

/// Runs replication `rep` on each of `variants`, which must share the
/// experiment scenario's training prefix (for example the same scenario
/// with and without a change). Every detector is calibrated once on that
/// prefix and the calibrated state is reused across variants.
pub fn run_replication_variants(
    spec: &ExperimentSpec,
    variants: &[Scenario],
    rep: usize,
) -> Result<Vec<ReplicationRecord>> {
    let wrap = |e: Error| Error::Replication {
        replication: rep,
        source: Box::new(e),
    };
    let base = spec.replication_scenario(rep);
    let n_train = base.n_train;
    let streams = variants
        .iter()
        .map(|v| {
            let sc = Scenario {
                seed: base.seed,
                ..v.clone()
            };
            if sc.n_train != n_train {
                return Err(Error::Config("variants must share n_train".into()));
            }
            sc.generate()
        })
        .collect::<Result<Vec<_>>>()
        .map_err(wrap)?;
    let training = match streams.first() {
        Some(s) => &s[..n_train],
        None => return Ok(Vec::new()),
    };
    if streams.iter().any(|s| s[..n_train] != *training) {
        return Err(wrap(Error::Config(
            "variants do not share the training prefix".into(),
        )));
    }
    let armed = spec
        .detectors
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let seed = derive_seed(base.seed, 1 + i as u64);
            arm(d, training, spec.alpha, spec.permutations, seed)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(wrap)?;
    streams
        .iter()
        .map(|s| {
            let trajectories = armed
                .iter()
                .map(|(a, c)| run_armed(a, *c, &s[n_train..]))
                .collect::<Result<Vec<_>>>()?;
            Ok(ReplicationRecord {
                replication: rep,
                trajectories,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(wrap)
}

/// Generates replication `rep`'s stream and runs every detector on it.
pub fn run_replication(spec: &ExperimentSpec, rep: usize) -> Result<ReplicationRecord> {
    let mut out = run_replication_variants(spec, std::slice::from_ref(&spec.scenario), rep)?;
    Ok(out.remove(0))
}

fn in_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 1 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(job))
}

/// Runs every replication on every variant; the result is indexed
/// `[variant][replication]`, ordered and independent of the worker count.
pub fn run_variants(spec: &ExperimentSpec, variants: &[Scenario]) -> Result<Vec<Vec<ReplicationRecord>>> {
    spec.validate()?;
    for v in variants {
        v.validate()?;
    }
    let results: Vec<Result<Vec<ReplicationRecord>>> = in_pool(spec.workers, || {
        (0..spec.replications)
            .into_par_iter()
            .map(|r| run_replication_variants(spec, variants, r))
            .collect()
    })?;
    let mut out = vec![Vec::with_capacity(spec.replications); variants.len()];
    for rep in results {
        for (slot, rec) in out.iter_mut().zip(rep?) {
            slot.push(rec);
        }
    }
    Ok(out)
}

/// Runs every replication, in parallel when `workers != 1`. The result is
/// ordered by replication and independent of the worker count.
pub fn run_replications(spec: &ExperimentSpec) -> Result<Vec<ReplicationRecord>> {
    let mut out = run_variants(spec, std::slice::from_ref(&spec.scenario))?;
    Ok(out.remove(0))
}

/// Outcome class of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    FalseAlarm,
    Correct { delay: usize },
    NoAlarm,
}

/// False alarm at or before the change (any alarm when there is none),
/// correct detection after it, or no alarm.
pub fn classify(alarm: Option<usize>, change_at: Option<usize>, n_total: usize) -> Outcome {
    match (alarm, change_at) {
        (None, _) => Outcome::NoAlarm,
        (Some(a), Some(b)) if a > b && a <= n_total => Outcome::Correct { delay: a - b },
        (Some(a), _) if a <= n_total => Outcome::FalseAlarm,
        (Some(_), _) => Outcome::NoAlarm,
    }
}

/// Aggregated metrics of one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSummary {
    pub detector: String,
    pub false_alarm_rate: f64,
    pub correct_detection_rate: f64,
    pub no_alarm_rate: f64,
    /// Mean and sample SD of delays over correct detections.
    pub add_mean: Option<f64>,
    pub add_sd: Option<f64>,
    pub alarm_times: Vec<Option<usize>>,
    pub thresholds: Vec<f64>,
}

impl DetectorSummary {
    pub fn from_alarms(
        detector: &str,
        alarm_times: Vec<Option<usize>>,
        thresholds: Vec<f64>,
        change_at: Option<usize>,
        n_total: usize,
    ) -> Self {
        let n = alarm_times.len().max(1) as f64;
        let (mut fa, mut na) = (0usize, 0usize);
        let mut delays: Vec<u64> = Vec::new();
        for &a in &alarm_times {
            match classify(a, change_at, n_total) {
                Outcome::FalseAlarm => fa += 1,
                Outcome::NoAlarm => na += 1,
                Outcome::Correct { delay } => delays.push(delay as u64),
            }
        }
        // Integer sums keep the aggregate independent of replication order.
        let k = delays.len() as u64;
        let s: u64 = delays.iter().sum();
        let ss: u64 = delays.iter().map(|d| d * d).sum();
        let add_mean = (k > 0).then(|| s as f64 / k as f64);
        let add_sd = (k > 0).then(|| {
            if k < 2 {
                0.0
            } else {
                let num = (k * ss - s * s) as f64;
                (num / (k * (k - 1)) as f64).sqrt()
            }
        });
        Self {
            detector: detector.to_string(),
            false_alarm_rate: fa as f64 / n,
            correct_detection_rate: k as f64 / n,
            no_alarm_rate: na as f64 / n,
            add_mean,
            add_sd,
            alarm_times,
            thresholds,
        }
    }
}

/// Aggregated experiment results.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub replications: usize,
    pub n_train: usize,
    pub n_total: usize,
    pub change_at: Option<usize>,
    pub detectors: Vec<DetectorSummary>,
}

/// Builds the report from trajectories at the calibrated thresholds.
pub fn report_from_records(spec: &ExperimentSpec, records: &[ReplicationRecord]) -> ExperimentReport {
    report_for_scenario(spec, &spec.scenario, records)
}

/// Report of the records of one variant from [`run_variants`].
pub fn report_for_scenario(
    spec: &ExperimentSpec,
    scenario: &Scenario,
    records: &[ReplicationRecord],
) -> ExperimentReport {
    report_at_multiplier(spec, scenario, records, 1.0)
}

fn alarm_index(n_train: usize, t: &Trajectory, multiplier: f64) -> Option<usize> {
    t.first_exceedance(multiplier).map(|pos| n_train + pos + 1)
}

fn report_at_multiplier(
    spec: &ExperimentSpec,
    sc: &Scenario,
    records: &[ReplicationRecord],
    multiplier: f64,
) -> ExperimentReport {
    let detectors = spec
        .detectors
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let alarms = records
                .iter()
                .map(|r| alarm_index(sc.n_train, &r.trajectories[i], multiplier))
                .collect();
            let thresholds = records.iter().map(|r| r.trajectories[i].threshold).collect();
            DetectorSummary::from_alarms(d.label(), alarms, thresholds, sc.change_at, sc.n_total)
        })
        .collect();
    ExperimentReport {
        replications: records.len(),
        n_train: sc.n_train,
        n_total: sc.n_total,
        change_at: sc.change_at,
        detectors,
    }
}

/// Runs the experiment and aggregates it.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let records = run_replications(spec)?;
    Ok(report_from_records(spec, &records))
}

/// One point of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub detector: String,
    pub multiplier: f64,
    pub fap: f64,
    pub add: f64,
}

/// Fifteen log-spaced multipliers from 1/4 to 4.
pub fn default_multipliers() -> Vec<f64> {
    (0..15).map(|i| 0.25 * 16f64.powf(i as f64 / 14.0)).collect()
}

/// FAP and ADD per detector and multiplier from stored trajectories. FAP is
/// the share of runs alarming at or before the change. ADD averages
/// `(τ − 𝔟)⁺` over all runs, with `τ = N_total` when no alarm occurs, so it
/// is nondecreasing in the multiplier on a fixed set of streams.
pub fn sweep_from_records(
    spec: &ExperimentSpec,
    records: &[ReplicationRecord],
    multipliers: &[f64],
) -> Result<Vec<SweepRow>> {
    if multipliers.windows(2).any(|p| p[0] > p[1]) {
        return Err(Error::Config("multipliers must be sorted ascending".into()));
    }
    let sc = &spec.scenario;
    if !multipliers.iter().all(|m| *m >= 0.0) {
        return Err(Error::Config("multipliers must be nonnegative".into()));
    }
    let b = sc.change_at.unwrap_or(sc.n_total);
    let n = records.len().max(1) as f64;
    let mut rows = Vec::with_capacity(spec.detectors.len() * multipliers.len());
    for (i, d) in spec.detectors.iter().enumerate() {
        for &m in multipliers {
            let (mut fa, mut delay) = (0usize, 0usize);
            for r in records {
                let tau = alarm_index(sc.n_train, &r.trajectories[i], m).unwrap_or(sc.n_total);
                if tau <= b {
                    fa += 1;
                }
                delay += tau.saturating_sub(b);
            }
            rows.push(SweepRow {
                detector: d.label().to_string(),
                multiplier: m,
                fap: fa as f64 / n,
                add: delay as f64 / n,
            });
        }
    }
    Ok(rows)
}

/// Runs the replications once and evaluates every multiplier on them.
pub fn sweep_thresholds(spec: &ExperimentSpec, multipliers: &[f64]) -> Result<Vec<SweepRow>> {
    let records = run_replications(spec)?;
    sweep_from_records(spec, &records, multipliers)
}

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(reader: R) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn opt_to_string<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes the report as `detector,metric,value` rows. Experiment-level rows
/// use the detector name `experiment`; absent values are empty.
pub fn write_report_csv<W: Write>(writer: W, report: &ExperimentReport) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["detector", "metric", "value"])?;
    let exp = "experiment";
    wtr.write_record([exp, "replications", &report.replications.to_string()])?;
    wtr.write_record([exp, "n_train", &report.n_train.to_string()])?;
    wtr.write_record([exp, "n_total", &report.n_total.to_string()])?;
    wtr.write_record([exp, "change_at", &opt_to_string(report.change_at)])?;
    for d in &report.detectors {
        let name = d.detector.as_str();
        wtr.write_record([name, "false_alarm_rate", &d.false_alarm_rate.to_string()])?;
        wtr.write_record([name, "correct_detection_rate", &d.correct_detection_rate.to_string()])?;
        wtr.write_record([name, "no_alarm_rate", &d.no_alarm_rate.to_string()])?;
        wtr.write_record([name, "add_mean", &opt_to_string(d.add_mean)])?;
        wtr.write_record([name, "add_sd", &opt_to_string(d.add_sd)])?;
        for (r, (a, t)) in d.alarm_times.iter().zip(&d.thresholds).enumerate() {
            wtr.write_record([name, &format!("alarm.{r}"), &opt_to_string(*a)])?;
            wtr.write_record([name, &format!("threshold.{r}"), &t.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Parses a report written by [`write_report_csv`].
pub fn read_report_csv<R: Read>(reader: R) -> Result<ExperimentReport> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut report = ExperimentReport {
        replications: 0,
        n_train: 0,
        n_total: 0,
        change_at: None,
        detectors: Vec::new(),
    };
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec?;
        let bad = |m: &str| Error::Parse {
            line,
            message: m.to_string(),
        };
        let (det, metric, value) = match (rec.get(0), rec.get(1), rec.get(2)) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(bad("expected three fields")),
        };
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad("expected an integer"));
        let float = |v: &str| v.parse::<f64>().map_err(|_| bad("expected a number"));
        let opt_float = |v: &str| if v.is_empty() { Ok(None) } else { float(v).map(Some) };
        let opt_int = |v: &str| if v.is_empty() { Ok(None) } else { int(v).map(Some) };
        if det == "experiment" {
            match metric {
                "replications" => report.replications = int(value)?,
                "n_train" => report.n_train = int(value)?,
                "n_total" => report.n_total = int(value)?,
                "change_at" => report.change_at = opt_int(value)?,
                _ => return Err(bad("unknown experiment metric")),
            }
            continue;
        }
        if report.detectors.last().is_none_or(|d| d.detector != det) {
            report.detectors.push(DetectorSummary {
                detector: det.to_string(),
                false_alarm_rate: 0.0,
                correct_detection_rate: 0.0,
                no_alarm_rate: 0.0,
                add_mean: None,
                add_sd: None,
                alarm_times: Vec::new(),
                thresholds: Vec::new(),
            });
        }
        let d = report.detectors.last_mut().expect("just pushed");
        match metric {
            "false_alarm_rate" => d.false_alarm_rate = float(value)?,
            "correct_detection_rate" => d.correct_detection_rate = float(value)?,
            "no_alarm_rate" => d.no_alarm_rate = float(value)?,
            "add_mean" => d.add_mean = opt_float(value)?,
            "add_sd" => d.add_sd = opt_float(value)?,
            m if m.starts_with("alarm.") => d.alarm_times.push(opt_int(value)?),
            m if m.starts_with("threshold.") => d.thresholds.push(float(value)?),
            _ => return Err(bad("unknown metric")),
        }
    }
    Ok(report)
}

/// Renders the report in the layout of a results table: rates as integer
/// percentages and ADD (SD) with two decimals.
pub fn format_table(report: &ExperimentReport) -> String {
    let pct = |v: f64| format!("{}%", (v * 100.0).round() as i64);
    let mut out = String::new();
    let _ = write!(out, "{:<18}", "");
    for d in &report.detectors {
        let _ = write!(out, "{:>16}", d.detector);
    }
    out.push('\n');
    let mut line = |name: &str, f: &dyn Fn(&DetectorSummary) -> String| {
        let _ = write!(out, "{name:<18}");
        for d in &report.detectors {
            let _ = write!(out, "{:>16}", f(d));
        }
        out.push('\n');
    };
    line("False Alarm", &|d| pct(d.false_alarm_rate));
    line("Correct Detection", &|d| pct(d.correct_detection_rate));
    line("No Alarm", &|d| pct(d.no_alarm_rate));
    line("ADD (SD)", &|d| match (d.add_mean, d.add_sd) {
        (Some(m), Some(s)) => format!("{m:.2} ({s:.2})"),
        _ => "-".to_string(),
    });
    out
}

/// Median per-step latency over two step ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub early_median_ns: f64,
    pub late_median_ns: f64,
}

impl BenchReport {
    pub fn ratio(&self) -> f64 {
        self.late_median_ns / self.early_median_ns
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times every step of a matrix detector that never alarms and returns the
/// median latency over steps `early` and `late`, both inclusive and counted
/// from the first step after `n_train`. The split and rank are chosen from
/// the training prefix as in calibration.
pub fn bench_step_latency(
    windows: &[PointWindow],
    n_train: usize,
    window: usize,
    gamma: f64,
    early: [usize; 2],
    late: [usize; 2],
) -> Result<BenchReport> {
    let last = early[1].max(late[1]);
    if windows.len() < n_train + last {
        return Err(Error::InsufficientData {
            need: n_train + last,
            got: windows.len(),
        });
    }
    let (training, stream) = windows.split_at(n_train);
    let split = crate::calibration::coordinate_split(training)?;
    let rank = crate::calibration::select_rank(training, gamma, &split, window)?;
    let config = DetectorConfig {
        gamma,
        split,
        rank,
        window,
        threshold_const: f64::INFINITY,
    };
    let mut det = MatrixDetector::new(config, training)?;
    let mut times = Vec::with_capacity(last);
    for w in &stream[..last] {
        let t = std::time::Instant::now();
        det.step(w)?;
        times.push(t.elapsed().as_nanos() as f64);
    }
    let range = |[a, b]: [usize; 2]| median(&mut times[a - 1..b].to_vec());
    Ok(BenchReport {
        early_median_ns: range(early),
        late_median_ns: range(late),
    })
}
