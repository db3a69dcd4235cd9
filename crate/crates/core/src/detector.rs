//! Streaming CUSUM detectors over sliding prefix/suffix sums.
//!
//! At time `j` and offset `k ∈ 1..=W` the detector compares the mean
//! embedding of windows `1..j−W+k−1` with that of `j−W+k..=j`:
//!
//! ```text
//! D = L[k] / n1 − R[k] / n2,   n1 = j − W − 1 + k,   n2 = W − k + 1
//! ```
//!
//! `L` holds prefix sums that shift by one window per step and `R` holds
//! suffix sums rebuilt from a ring buffer of the last `W` embeddings, so the
//! cost of a step depends on `W` and the basis size but never on `j`.
//! The multivariate detector scores `D` with the restricted SVD; the 1D
//! detector uses the Euclidean norm of a coefficient vector.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::embedding::{CoordinateSplit, Embedder, IntensityMatrix, PointWindow};
use crate::error::{Error, Result};
use crate::legendre::fill_univariate;
use crate::lowrank::{ceil_root, RestrictedScorer};

/// Hyperparameters of the multivariate detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub gamma: f64,
    pub split: CoordinateSplit,
    pub rank: usize,
    pub window: usize,
    pub threshold_const: f64,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma {} must be > 0", self.gamma)));
        }
        if self.rank < 1 {
            return Err(Error::InvalidParameter("rank must be at least 1".into()));
        }
        if self.window < 2 {
            return Err(Error::InvalidParameter(format!(
                "window {} must be at least 2",
                self.window
            )));
        }
        if !(self.threshold_const >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold constant {} must be nonnegative",
                self.threshold_const
            )));
        }
        Ok(())
    }

    /// `M = ⌈(W/r)^{1/(2γ + p∨q)}⌉`.
    pub fn basis_size(&self) -> usize {
        basis_size(self.window, self.rank, self.gamma, self.split.pq_max())
    }
}

pub fn basis_size(window: usize, rank: usize, gamma: f64, pq_max: usize) -> usize {
    ceil_root(window as f64 / rank as f64, 2.0 * gamma + pq_max as f64)
}

/// `M = ⌈W^{1/(2γ+1)}⌉` for the univariate detector.
pub fn basis_size_1d(window: usize, gamma: f64) -> usize {
    ceil_root(window as f64, 2.0 * gamma + 1.0)
}

/// `C_α (r/n2)^{γ/(2γ + p∨q)} ln j`.
pub fn threshold(j: usize, n2: usize, rank: usize, gamma: f64, pq_max: usize, c_alpha: f64) -> f64 {
    let expo = gamma / (2.0 * gamma + pq_max as f64);
    c_alpha * (rank as f64 / n2 as f64).powf(expo) * (j as f64).ln()
}

/// `C_α n2^{−γ/(2γ+1)} ln j`.
pub fn threshold_1d(j: usize, n2: usize, gamma: f64, c_alpha: f64) -> f64 {
    c_alpha * (n2 as f64).powf(-gamma / (2.0 * gamma + 1.0)) * (j as f64).ln()
}

/// Alarm details: the time `j`, the offset `k` that first exceeded, and the
/// score/threshold pair at that offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmReport {
    pub time: usize,
    /// Window index of the alarming observation.
    pub index: usize,
    pub offset: usize,
    pub n2: usize,
    pub score: f64,
    pub threshold: f64,
}

/// One CUSUM evaluation recorded while tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub offset: usize,
    pub n1: usize,
    pub n2: usize,
    pub diff: Vec<f64>,
    pub score: f64,
    pub threshold: f64,
}

/// Prefix list `L`, suffix list `R` and the ring buffer of recent embeddings.
#[derive(Debug, Clone)]
struct SlidingSums {
    window: usize,
    prefix: VecDeque<Vec<f64>>,
    recent: VecDeque<Vec<f64>>,
    suffix: Vec<Vec<f64>>,
    diff: Vec<f64>,
    /// Window index of relative time 0.
    origin: usize,
    time: usize,
}

impl SlidingSums {
    fn new(window: usize, dim: usize, training: &[(usize, Vec<f64>)]) -> Result<Self> {
        let n = training.len();
        if n == 0 {
            return Err(Error::InsufficientData { need: window, got: 0 });
        }
        if n < window {
            return Err(Error::InsufficientData { need: window, got: n });
        }
        let origin = training[0].0.checked_sub(1).ok_or(Error::OutOfOrder {
            expected: 1,
            got: 0,
        })?;
        for (pos, (idx, _)) in training.iter().enumerate() {
            if *idx != origin + pos + 1 {
                return Err(Error::OutOfOrder {
                    expected: origin + pos + 1,
                    got: *idx,
                });
            }
        }
        // L[1] = Σ_{i ≤ N−W} E_i, L[k] = L[k−1] + E_{N−W+k−1}.
        let mut acc = vec![0.0; dim];
        for (_, e) in &training[..n - window] {
            add_into(&mut acc, e);
        }
        let mut prefix = VecDeque::with_capacity(window);
        prefix.push_back(acc.clone());
        for (_, e) in &training[n - window..n - 1] {
            add_into(&mut acc, e);
            prefix.push_back(acc.clone());
        }
        let recent = training[n - window..].iter().map(|(_, e)| e.clone()).collect();
        Ok(Self {
            window,
            prefix,
            recent,
            suffix: vec![vec![0.0; dim]; window],
            diff: vec![0.0; dim],
            origin,
            time: n,
        })
    }

    fn next_index(&self) -> usize {
        self.origin + self.time + 1
    }

    /// Advances to `j + 1` with the new embedding already written into
    /// `incoming`; returns the recycled buffer of the evicted embedding.
    fn advance(&mut self, incoming: Vec<f64>) -> Vec<f64> {
        self.time += 1;
        // Shift L; the new L[W] is the pre-shift L[W] plus E_{j−1}.
        let mut reused = self.prefix.pop_front().expect("window ≥ 2");
        let last = self.prefix.back().expect("window ≥ 2");
        let newest = self.recent.back().expect("window ≥ 2");
        for ((dst, a), b) in reused.iter_mut().zip(last).zip(newest) {
            *dst = a + b;
        }
        self.prefix.push_back(reused);

        let evicted = self.recent.pop_front().expect("window ≥ 2");
        self.recent.push_back(incoming);

        // R[k] = Σ_{i=j−W+k}^{j} E_i, built from the newest end.
        let w = self.window;
        self.suffix[w - 1].copy_from_slice(&self.recent[w - 1]);
        for k in (0..w - 1).rev() {
            let (lo, hi) = self.suffix.split_at_mut(k + 1);
            for ((dst, a), b) in lo[k].iter_mut().zip(&hi[0]).zip(&self.recent[k]) {
                *dst = a + b;
            }
        }
        evicted
    }

    /// Writes `D` for the 1-based offset `k` into `self.diff`; returns `(n1, n2)`.
    fn form_diff(&mut self, k: usize) -> (usize, usize) {
        let n1 = self.time - self.window - 1 + k;
        let n2 = self.window - k + 1;
        let (a, b) = (1.0 / n1 as f64, 1.0 / n2 as f64);
        for ((d, l), r) in self.diff.iter_mut().zip(&self.prefix[k - 1]).zip(&self.suffix[k - 1]) {
            *d = a * l - b * r;
        }
        (n1, n2)
    }

    /// Runs the CUSUM scan for the current time, stopping at the first
    /// exceedance.
    fn scan<S, T>(
        &mut self,
        mut score: S,
        mut threshold: T,
        mut trace: Option<&mut Vec<Evaluation>>,
    ) -> Option<AlarmReport>
    where
        S: FnMut(&[f64], usize) -> f64,
        T: FnMut(usize, usize) -> f64,
    {
        let j = self.time;
        for k in 1..=self.window {
            let (n1, n2) = self.form_diff(k);
            let s = score(&self.diff, n2);
            let tau = threshold(j, n2);
            if let Some(t) = trace.as_deref_mut() {
                t.push(Evaluation {
                    offset: k,
                    n1,
                    n2,
                    diff: self.diff.clone(),
                    score: s,
                    threshold: tau,
                });
            }
            if s > tau {
                return Some(AlarmReport {
                    time: j,
                    index: self.origin + j,
                    offset: k,
                    n2,
                    score: s,
                    threshold: tau,
                });
            }
        }
        None
    }
}

impl SlidingSums {
    /// Largest `score / shape` over all offsets at the current time.
    fn peak<S, T>(&mut self, mut score: S, mut shape: T) -> f64
    where
        S: FnMut(&[f64], usize) -> f64,
        T: FnMut(usize, usize) -> f64,
    {
        let j = self.time;
        let mut best = 0.0f64;
        for k in 1..=self.window {
            let (_, n2) = self.form_diff(k);
            best = best.max(score(&self.diff, n2) / shape(j, n2));
        }
        best
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Multivariate low-rank intensity-matrix detector.
#[derive(Debug, Clone)]
pub struct MatrixDetector {
    config: DetectorConfig,
    embedder: Embedder,
    scorer: RestrictedScorer,
    sums: SlidingSums,
    spare: IntensityMatrix,
    /// `(r/n2)^{γ/(2γ+p∨q)}` for `n2 = 1..=W`.
    shapes: Vec<f64>,
    alarm: Option<AlarmReport>,
    trace: Option<Vec<Evaluation>>,
}

impl MatrixDetector {
    /// Initializes `L` and the ring buffer from consecutive training windows.
    pub fn new(config: DetectorConfig, training: &[PointWindow]) -> Result<Self> {
        config.validate()?;
        let m = config.basis_size();
        let mut embedder = Embedder::new(config.split.clone(), m)?;
        let embedded = training
            .iter()
            .map(|w| Ok((w.index, embedder.embed(w)?.as_slice().to_vec())))
            .collect::<Result<Vec<_>>>()?;
        let (rows, cols) = embedder.shape();
        let sums = SlidingSums::new(config.window, rows * cols, &embedded)?;
        let scorer = RestrictedScorer::new(
            m,
            config.split.p(),
            config.split.q(),
            config.rank,
            config.gamma,
        )?;
        let expo = config.gamma / (2.0 * config.gamma + config.split.pq_max() as f64);
        let shapes = (1..=config.window)
            .map(|n2| (config.rank as f64 / n2 as f64).powf(expo))
            .collect();
        Ok(Self {
            config,
            embedder,
            scorer,
            sums,
            spare: IntensityMatrix::zeros(rows, cols),
            shapes,
            alarm: None,
            trace: None,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn basis_size(&self) -> usize {
        self.embedder.basis_size()
    }

    /// Current relative time `j` (training length plus steps taken).
    pub fn time(&self) -> usize {
        self.sums.time
    }

    pub fn next_index(&self) -> usize {
        self.sums.next_index()
    }

    pub fn alarm(&self) -> Option<&AlarmReport> {
        self.alarm.as_ref()
    }

    pub fn is_alarmed(&self) -> bool {
        self.alarm.is_some()
    }

    /// Records every CUSUM evaluation of subsequent steps.
    pub fn set_tracing(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    /// Evaluations of the most recent step when tracing is on.
    pub fn last_evaluations(&self) -> &[Evaluation] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// `L[1..=W]` as flat row-major matrices.
    pub fn prefix_sums(&self) -> impl Iterator<Item = &[f64]> {
        self.sums.prefix.iter().map(Vec::as_slice)
    }

    /// `R[1..=W]` as flat row-major matrices, as of the last step.
    pub fn suffix_sums(&self) -> impl Iterator<Item = &[f64]> {
        self.sums.suffix.iter().map(Vec::as_slice)
    }

    /// Consumes the next window and returns an alarm if any offset exceeds
    /// its threshold.
    pub fn step(&mut self, w: &PointWindow) -> Result<Option<AlarmReport>> {
        if self.alarm.is_some() {
            return Err(Error::AlreadyAlarmed);
        }
        self.ingest(w)?;
        let c = self.config.threshold_const;
        let (scorer, shapes) = (&mut self.scorer, &self.shapes);
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
        let report = self.sums.scan(
            |d, n2| scorer.score(d, n2),
            |j, n2| c * shapes[n2 - 1] * (j as f64).ln(),
            self.trace.as_mut(),
        );
        self.alarm = report;
        Ok(report)
    }

    /// Consumes the next window without alarming and returns the largest
    /// ratio of score to the threshold taken with unit constant. The
    /// detector alarms at this step exactly when the ratio exceeds `C_α`.
    pub fn step_peak(&mut self, w: &PointWindow) -> Result<f64> {
        if self.alarm.is_some() {
            return Err(Error::AlreadyAlarmed);
        }
        self.ingest(w)?;
        let (scorer, shapes) = (&mut self.scorer, &self.shapes);
        Ok(self.sums.peak(
            |d, n2| scorer.score(d, n2),
            |j, n2| shapes[n2 - 1] * (j as f64).ln(),
        ))
    }

    fn ingest(&mut self, w: &PointWindow) -> Result<()> {
        let expected = self.sums.next_index();
        if w.index != expected {
            return Err(Error::OutOfOrder {
                expected,
                got: w.index,
            });
        }
        self.embedder.embed_into(w, &mut self.spare)?;
        let incoming = self.spare.as_slice().to_vec();
        let evicted = self.sums.advance(incoming);
        // Keep the evicted allocation as the next scratch matrix.
        let (rows, cols) = self.embedder.shape();
        self.spare = IntensityMatrix::from_row_major(rows, cols, evicted)?;
        Ok(())
    }

    /// Re-initializes from a fresh training segment after an alarm.
    pub fn reset_after_alarm(&mut self, restart_training: &[PointWindow]) -> Result<()> {
        if self.alarm.is_none() {
            return Err(Error::NotAlarmed);
        }
        let tracing = self.trace.is_some();
        *self = Self::new(self.config.clone(), restart_training)?;
        self.set_tracing(tracing);
        Ok(())
    }
}

/// Hyperparameters of the univariate detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector1dConfig {
    pub gamma: f64,
    pub window: usize,
    pub threshold_const: f64,
}

impl Detector1dConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma {} must be > 0", self.gamma)));
        }
        if self.window < 2 {
            return Err(Error::InvalidParameter(format!(
                "window {} must be at least 2",
                self.window
            )));
        }
        if !(self.threshold_const >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold constant {} must be nonnegative",
                self.threshold_const
            )));
        }
        Ok(())
    }

    pub fn basis_size(&self) -> usize {
        basis_size_1d(self.window, self.gamma)
    }
}

/// `V_μ = Σ_x φ_μ(x)` for a window on `[0, 1]`.
pub fn embed_window_1d(w: &PointWindow, basis_size: usize) -> Result<Vec<f64>> {
    if w.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: w.dim(),
        });
    }
    let mut out = vec![0.0; basis_size];
    let mut vals = vec![0.0; basis_size];
    for &x in w.coords() {
        fill_univariate(x, &mut vals);
        add_into(&mut out, &vals);
    }
    Ok(out)
}

/// Univariate coefficient-vector detector.
#[derive(Debug, Clone)]
pub struct Detector1d {
    config: Detector1dConfig,
    basis_size: usize,
    sums: SlidingSums,
    /// `n2^{−γ/(2γ+1)}` for `n2 = 1..=W`.
    shapes: Vec<f64>,
    alarm: Option<AlarmReport>,
    trace: Option<Vec<Evaluation>>,
}

impl Detector1d {
    pub fn new(config: Detector1dConfig, training: &[PointWindow]) -> Result<Self> {
        config.validate()?;
        let m = config.basis_size();
        let embedded = training
            .iter()
            .map(|w| Ok((w.index, embed_window_1d(w, m)?)))
            .collect::<Result<Vec<_>>>()?;
        let sums = SlidingSums::new(config.window, m, &embedded)?;
        let shapes = (1..=config.window)
            .map(|n2| (n2 as f64).powf(-config.gamma / (2.0 * config.gamma + 1.0)))
            .collect();
        Ok(Self {
            config,
            basis_size: m,
            sums,
            shapes,
            alarm: None,
            trace: None,
        })
    }

    pub fn config(&self) -> &Detector1dConfig {
        &self.config
    }

    pub fn basis_size(&self) -> usize {
        self.basis_size
    }

    pub fn time(&self) -> usize {
        self.sums.time
    }

    pub fn alarm(&self) -> Option<&AlarmReport> {
        self.alarm.as_ref()
    }

    pub fn set_tracing(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    pub fn last_evaluations(&self) -> &[Evaluation] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Univariate counterpart of [`MatrixDetector::step_peak`].
    pub fn step_peak(&mut self, w: &PointWindow) -> Result<f64> {
        if self.alarm.is_some() {
            return Err(Error::AlreadyAlarmed);
        }
        self.ingest(w)?;
        let shapes = &self.shapes;
        Ok(self.sums.peak(
            |d, _| d.iter().map(|v| v * v).sum::<f64>().sqrt(),
            |j, n2| shapes[n2 - 1] * (j as f64).ln(),
        ))
    }

    fn ingest(&mut self, w: &PointWindow) -> Result<()> {
        let expected = self.sums.next_index();
        if w.index != expected {
            return Err(Error::OutOfOrder {
                expected,
                got: w.index,
            });
        }
        let e = embed_window_1d(w, self.basis_size)?;
        self.sums.advance(e);
        Ok(())
    }

    pub fn step(&mut self, w: &PointWindow) -> Result<Option<AlarmReport>> {
        if self.alarm.is_some() {
            return Err(Error::AlreadyAlarmed);
        }
        self.ingest(w)?;
        let (c, shapes) = (self.config.threshold_const, &self.shapes);
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
        let report = self.sums.scan(
            |d, _| d.iter().map(|v| v * v).sum::<f64>().sqrt(),
            |j, n2| c * shapes[n2 - 1] * (j as f64).ln(),
            self.trace.as_mut(),
        );
        self.alarm = report;
        Ok(report)
    }

    pub fn reset_after_alarm(&mut self, restart_training: &[PointWindow]) -> Result<()> {
        if self.alarm.is_none() {
            return Err(Error::NotAlarmed);
        }
        let tracing = self.trace.is_some();
        *self = Self::new(self.config.clone(), restart_training)?;
        self.set_tracing(tracing);
        Ok(())
    }
}
