//! Comparison detectors: a blockwise MMD detector and a kernel intensity
//! estimator (KIE) CUSUM. Both compare the most recent `W` windows with the
//! `W` windows before them.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::order_statistic_index;
use crate::detector::AlarmReport;
use crate::embedding::PointWindow;
use crate::error::{Error, Result};
use crate::sim::derive_seed;

/// Points used for the median heuristic.
const MEDIAN_SAMPLE: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Mmd,
    Kie,
}

/// Baseline hyperparameters. A missing bandwidth is resolved from training
/// data: the median heuristic for MMD, per-axis Silverman for KIE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// Lattice points per axis (KIE only); defaults to 16 for `d ≤ 3` and 8
    /// above.
    #[serde(default)]
    pub grid_res: Option<usize>,
    pub window: usize,
    #[serde(default)]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, window: usize) -> Self {
        Self {
            kind,
            bandwidth: None,
            grid_res: None,
            window,
            threshold: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::InvalidParameter("baseline window must be at least 1".into()));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidParameter(format!("bandwidth {h} must be > 0")));
            }
        }
        if let Some(g) = self.grid_res {
            if g < 4 {
                return Err(Error::InvalidParameter(format!("grid_res {g} must be at least 4")));
            }
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::InvalidParameter("threshold must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn grid_res_for(&self, dim: usize) -> usize {
        self.grid_res.unwrap_or(if dim <= 3 { 16 } else { 8 })
    }
}

fn training_dim(training: &[PointWindow]) -> Result<usize> {
    let dim = training
        .first()
        .ok_or(Error::InsufficientData { need: 1, got: 0 })?
        .dim();
    if let Some(w) = training.iter().find(|w| w.dim() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: w.dim(),
        });
    }
    Ok(dim)
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Median pairwise distance over (a strided subsample of) the pooled points.
pub fn median_heuristic(training: &[PointWindow]) -> Result<f64> {
    let dim = training_dim(training)?;
    let pooled: Vec<&[f64]> = training.iter().flat_map(|w| w.points()).collect();
    if pooled.len() < 2 {
        return Err(Error::InsufficientData {
            need: 2,
            got: pooled.len(),
        });
    }
    let stride = pooled.len().div_ceil(MEDIAN_SAMPLE);
    let sample: Vec<&[f64]> = pooled.iter().step_by(stride).copied().collect();
    let mut dists: Vec<f64> = Vec::with_capacity(sample.len() * sample.len() / 2);
    for (i, x) in sample.iter().enumerate() {
        for y in &sample[i + 1..] {
            dists.push(sq_dist(x, y).sqrt());
        }
    }
    if dists.is_empty() {
        return Err(Error::InsufficientData { need: 2, got: 1 });
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    if !(*median > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "median pairwise distance is zero in dimension {dim}"
        )));
    }
    Ok(*median)
}

/// Per-axis Silverman bandwidth `n^{−1/(d+4)} · sd_j` over pooled points.
pub fn silverman_bandwidths(training: &[PointWindow]) -> Result<Vec<f64>> {
    let dim = training_dim(training)?;
    let n = training.iter().map(PointWindow::len).sum::<usize>();
    if n < 2 {
        return Err(Error::InsufficientData { need: 2, got: n });
    }
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for p in training.iter().flat_map(|w| w.points()) {
        for j in 0..dim {
            sum[j] += p[j];
            sq[j] += p[j] * p[j];
        }
    }
    let nf = n as f64;
    let factor = nf.powf(-1.0 / (dim as f64 + 4.0));
    (0..dim)
        .map(|j| {
            let mean = sum[j] / nf;
            let var = (sq[j] - nf * mean * mean) / (nf - 1.0);
            if var > 0.0 {
                Ok(factor * var.sqrt())
            } else {
                Err(Error::ZeroVariance(j))
            }
        })
        .collect()
}

/// `Σ_{x∈a, y∈b} exp(−‖x−y‖² / 2h²)`, including `x = y` terms when `a` and
/// `b` are the same set.
fn kernel_sum(a: &PointWindow, b: &PointWindow, inv_two_h2: f64) -> f64 {
    let mut s = 0.0;
    for x in a.points() {
        for y in b.points() {
            s += (-sq_dist(x, y) * inv_two_h2).exp();
        }
    }
    s
}

fn mmd_from_sums(kxx: f64, kyy: f64, kxy: f64, m: usize, n: usize) -> f64 {
    if m < 2 || n < 2 {
        return 0.0;
    }
    let (mf, nf) = (m as f64, n as f64);
    // Self-pairs contribute exp(0) = 1 each and are excluded.
    (kxx - mf) / (mf * (mf - 1.0)) + (kyy - nf) / (nf * (nf - 1.0)) - 2.0 * kxy / (mf * nf)
}

/// Unbiased squared MMD with a Gaussian kernel of bandwidth `h` between two
/// pooled point sets. Zero when either set has fewer than two points.
pub fn mmd2_unbiased(x: &[&[f64]], y: &[&[f64]], h: f64) -> f64 {
    let c = 1.0 / (2.0 * h * h);
    let k = |a: &[f64], b: &[f64]| (-sq_dist(a, b) * c).exp();
    let (m, n) = (x.len(), y.len());
    if m < 2 || n < 2 {
        return 0.0;
    }
    let mut kxx = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kxx += k(x[i], x[j]);
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kyy += k(y[i], y[j]);
            }
        }
    }
    let kxy: f64 = x.iter().flat_map(|a| y.iter().map(move |b| k(a, b))).sum();
    let (mf, nf) = (m as f64, n as f64);
    kxx / (mf * (mf - 1.0)) + kyy / (nf * (nf - 1.0)) - 2.0 * kxy / (mf * nf)
}

fn block_mmd(a: &[PointWindow], b: &[PointWindow], h: f64) -> f64 {
    let x: Vec<&[f64]> = a.iter().flat_map(|w| w.points()).collect();
    let y: Vec<&[f64]> = b.iter().flat_map(|w| w.points()).collect();
    mmd2_unbiased(&x, &y, h)
}

fn check_history(training: &[PointWindow], window: usize) -> Result<()> {
    if training.len() < 2 * window {
        return Err(Error::InsufficientData {
            need: 2 * window,
            got: training.len(),
        });
    }
    let first = training[0].index;
    for (pos, w) in training.iter().enumerate() {
        if w.index != first + pos {
            return Err(Error::OutOfOrder {
                expected: first + pos,
                got: w.index,
            });
        }
    }
    Ok(())
}

/// Sliding two-block MMD detector. Kernel sums between every pair of the last
/// `2W` windows are cached so each step evaluates the kernel only against
/// the incoming window.
#[derive(Debug, Clone)]
pub struct MmdDetector {
    config: BaselineConfig,
    bandwidth: f64,
    inv_two_h2: f64,
    windows: VecDeque<PointWindow>,
    /// `pairs[a][b]` for ring positions `a, b` (oldest first).
    pairs: VecDeque<VecDeque<f64>>,
    next_index: usize,
    time: usize,
    alarm: Option<AlarmReport>,
}

impl MmdDetector {
    pub fn new(config: BaselineConfig, training: &[PointWindow]) -> Result<Self> {
        config.validate()?;
        if config.kind != BaselineKind::Mmd {
            return Err(Error::InvalidParameter("expected an mmd configuration".into()));
        }
        check_history(training, config.window)?;
        let bandwidth = match config.bandwidth {
            Some(h) => h,
            None => median_heuristic(training)?,
        };
        let inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
        let recent = &training[training.len() - 2 * config.window..];
        let windows: VecDeque<PointWindow> = recent.iter().cloned().collect();
        let pairs = windows
            .iter()
            .map(|a| windows.iter().map(|b| kernel_sum(a, b, inv_two_h2)).collect())
            .collect();
        let last = training.last().expect("checked nonempty");
        Ok(Self {
            config,
            bandwidth,
            inv_two_h2,
            windows,
            pairs,
            next_index: last.index + 1,
            time: training.len(),
            alarm: None,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn alarm(&self) -> Option<&AlarmReport> {
        self.alarm.as_ref()
    }

    /// Consumes the next window and returns the current statistic without
    /// alarming.
    pub fn step_statistic(&mut self, w: &PointWindow) -> Result<f64> {
        if self.alarm.is_some() {
            return Err(Error::AlreadyAlarmed);
        }
        if w.index != self.next_index {
            return Err(Error::OutOfOrder {
                expected: self.next_index,
                got: w.index,
            });
        }
        self.windows.pop_front();
        self.pairs.pop_front();
        for row in self.pairs.iter_mut() {
            row.pop_front();
        }
        self.windows.push_back(w.clone());
        let fresh: VecDeque<f64> = self
            .windows
            .iter()
            .map(|b| kernel_sum(w, b, self.inv_two_h2))
            .collect();
        for (row, &v) in self.pairs.iter_mut().zip(&fresh) {
            row.push_back(v);
        }
        self.pairs.push_back(fresh);
        self.next_index += 1;
        self.time += 1;

        let half = self.config.window;
        let block = |lo: usize, hi: usize, lo2: usize, hi2: usize| -> f64 {
            (lo..hi)
                .map(|a| (lo2..hi2).map(|b| self.pairs[a][b]).sum::<f64>())
                .sum()
        };
        let m: usize = self.windows.iter().take(half).map(PointWindow::len).sum();
        let n: usize = self.windows.iter().skip(half).map(PointWindow::len).sum();
        let kxx = block(0, half, 0, half);
        let kyy = block(half, 2 * half, half, 2 * half);
        let kxy = block(0, half, half, 2 * half);
        Ok(mmd_from_sums(kxx, kyy, kxy, m, n))
    }

    pub fn step(&mut self, w: &PointWindow) -> Result<Option<AlarmReport>> {
        let stat = self.step_statistic(w)?;
        self.alarm = (stat > self.config.threshold).then(|| AlarmReport {
            time: self.time,
            index: w.index,
            offset: 1,
            n2: self.config.window,
            score: stat,
            threshold: self.config.threshold,
        });
        Ok(self.alarm)
    }
}

/// Per-axis Gaussian kernel values on the lattice `(g + ½)/G`.
fn axis_kernel(x: f64, h: f64, grid_res: usize, out: &mut [f64]) {
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    for (g, o) in out.iter_mut().enumerate() {
        let u = (g as f64 + 0.5) / grid_res as f64;
        let t = (u - x) / h;
        *o = norm * (-0.5 * t * t).exp();
    }
}

/// Unnormalized kernel sum `Σ_x Π_j K_{h_j}(u_j − x_j)` over a `G^d`
/// lattice, first axis fastest.
pub fn kie_lattice(w: &PointWindow, bandwidths: &[f64], grid_res: usize) -> Vec<f64> {
    let d = w.dim();
    let total = grid_res.pow(d as u32);
    let mut out = vec![0.0; total];
    let mut axis = vec![0.0; d * grid_res];
    let mut prod = vec![0.0; total];
    for x in w.points() {
        for j in 0..d {
            axis_kernel(x[j], bandwidths[j], grid_res, &mut axis[j * grid_res..(j + 1) * grid_res]);
        }
        prod[0] = 1.0;
        let mut len = 1;
        for j in 0..d {
            let vals = &axis[j * grid_res..(j + 1) * grid_res];
            for b in (0..grid_res).rev() {
                for i in 0..len {
                    prod[b * len + i] = prod[i] * vals[b];
                }
            }
            len *= grid_res;
        }
        for (o, p) in out.iter_mut().zip(&prod) {
            *o += p;
        }
    }
    out
}

/// Lattice L2 distance between two segment intensity estimates, each the
/// summed lattice divided by its number of windows.
fn lattice_distance(a: &[f64], na: usize, b: &[f64], nb: usize) -> f64 {
    let sa = if na == 0 { 0.0 } else { 1.0 / na as f64 };
    let sb = if nb == 0 { 0.0 } else { 1.0 / nb as f64 };
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (sa * x - sb * y).powi(2)).sum();
    (ss / a.len() as f64).sqrt()
}

/// KIE statistic between two window segments: `‖λ̂_a − λ̂_b‖₂` by lattice
/// quadrature, where `λ̂` is the kernel-smoothed point mass divided by the
/// segment length. An empty segment has the zero estimate.
pub fn kie_statistic(a: &[PointWindow], b: &[PointWindow], bandwidths: &[f64], grid_res: usize) -> f64 {
    let dim = bandwidths.len();
    let total = grid_res.pow(dim as u32);
    let sum = |seg: &[PointWindow]| {
        let mut acc = vec![0.0; total];
        for w in seg {
            for (o, v) in acc.iter_mut().zip(kie_lattice(w, bandwidths, grid_res)) {
                *o += v;
            }
        }
        acc
    };
    lattice_distance(&sum(a), a.len(), &sum(b), b.len())
}

/// Sliding two-block KIE detector.
#[derive(Debug, Clone)]
pub struct KieDetector {
    config: BaselineConfig,
    bandwidths: Vec<f64>,
    grid_res: usize,
    lattices: VecDeque<Vec<f64>>,
    older: Vec<f64>,
    newer: Vec<f64>,
    next_index: usize,
    time: usize,
    alarm: Option<AlarmReport>,
}

impl KieDetector {
    pub fn new(config: BaselineConfig, training: &[PointWindow]) -> Result<Self> {
        config.validate()?;
        if config.kind != BaselineKind::Kie {
            return Err(Error::InvalidParameter("expected a kie configuration".into()));
        }
        check_history(training, config.window)?;
        let dim = training_dim(training)?;
        let bandwidths = match config.bandwidth {
            Some(h) => vec![h; dim],
            None => silverman_bandwidths(training)?,
        };
        let grid_res = config.grid_res_for(dim);
        let w = config.window;
        let lattices: VecDeque<Vec<f64>> = training[training.len() - 2 * w..]
            .iter()
            .map(|win| kie_lattice(win, &bandwidths, grid_res))
            .collect();
        let total = grid_res.pow(dim as u32);
        let mut older = vec![0.0; total];
        let mut newer = vec![0.0; total];
        for (i, l) in lattices.iter().enumerate() {
            let dst = if i < w { &mut older } else { &mut newer };
            dst.iter_mut().zip(l).for_each(|(d, v)| *d += v);
        }
        let last = training.last().expect("checked nonempty");
        Ok(Self {
            config,
            bandwidths,
            grid_res,
            lattices,
            older,
            newer,
            next_index: last.index + 1,
            time: training.len(),
            alarm: None,
        })
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn grid_res(&self) -> usize {
        self.grid_res
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn alarm(&self) -> Option<&AlarmReport> {
        self.alarm.as_ref()
    }

    pub fn step_statistic(&mut self, w: &PointWindow) -> Result<f64> {
        if self.alarm.is_some() {
            return Err(Error::AlreadyAlarmed);
        }
        if w.index != self.next_index {
            return Err(Error::OutOfOrder {
                expected: self.next_index,
                got: w.index,
            });
        }
        let half = self.config.window;
        let fresh = kie_lattice(w, &self.bandwidths, self.grid_res);
        let leaving = self.lattices.pop_front().expect("2W lattices");
        let crossing = &self.lattices[half - 1];
        for i in 0..fresh.len() {
            self.older[i] += crossing[i] - leaving[i];
            self.newer[i] += fresh[i] - crossing[i];
        }
        self.lattices.push_back(fresh);
        self.next_index += 1;
        self.time += 1;
        Ok(lattice_distance(&self.older, half, &self.newer, half))
    }

    pub fn step(&mut self, w: &PointWindow) -> Result<Option<AlarmReport>> {
        let stat = self.step_statistic(w)?;
        self.alarm = (stat > self.config.threshold).then(|| AlarmReport {
            time: self.time,
            index: w.index,
            offset: 1,
            n2: self.config.window,
            score: stat,
            threshold: self.config.threshold,
        });
        Ok(self.alarm)
    }
}

/// Permutation threshold for a baseline. Replicate `b` shuffles the training
/// windows, splits them into halves, and evaluates the baseline statistic
/// between the first `W` windows of each half. Returns the `⌈(1−α)B⌉`-th
/// order statistic, floored at zero.
pub fn calibrate_baseline(
    training: &[PointWindow],
    config: &BaselineConfig,
    alpha: f64,
    permutations: usize,
) -> Result<f64> {
    config.validate()?;
    if permutations < 1 {
        return Err(Error::InvalidParameter("need at least one permutation".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let w = config.window;
    let half = training.len() / 2;
    if half < w {
        return Err(Error::InsufficientData {
            need: 2 * w,
            got: training.len(),
        });
    }
    let dim = training_dim(training)?;
    let mut order: Vec<usize> = (0..training.len()).collect();
    let mut draw = |b: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, b as u64));
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        order.shuffle(&mut rng);
        (order[..w].to_vec(), order[half..half + w].to_vec())
    };
    let mut stats = Vec::with_capacity(permutations);
    match config.kind {
        BaselineKind::Mmd => {
            let h = match config.bandwidth {
                Some(h) => h,
                None => median_heuristic(training)?,
            };
            for b in 0..permutations {
                let (ia, ib) = draw(b);
                let a: Vec<PointWindow> = ia.iter().map(|&i| training[i].clone()).collect();
                let bb: Vec<PointWindow> = ib.iter().map(|&i| training[i].clone()).collect();
                stats.push(block_mmd(&a, &bb, h));
            }
        }
        BaselineKind::Kie => {
            let hs = match config.bandwidth {
                Some(h) => vec![h; dim],
                None => silverman_bandwidths(training)?,
            };
            let g = config.grid_res_for(dim);
            let lattices: Vec<Vec<f64>> = training.iter().map(|t| kie_lattice(t, &hs, g)).collect();
            let total = g.pow(dim as u32);
            for b in 0..permutations {
                let (ia, ib) = draw(b);
                let sum = |idx: &[usize]| {
                    let mut acc = vec![0.0; total];
                    for &i in idx {
                        acc.iter_mut().zip(&lattices[i]).for_each(|(d, v)| *d += v);
                    }
                    acc
                };
                stats.push(lattice_distance(&sum(&ia), w, &sum(&ib), w));
            }
        }
    }
    stats.sort_by(f64::total_cmp);
    // Unbiased MMD² can be negative; a threshold below zero is meaningless.
    Ok(stats[order_statistic_index(alpha, permutations)].max(0.0))
}
