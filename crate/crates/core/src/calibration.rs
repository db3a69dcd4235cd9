//! Data-driven tuning from training windows: coordinate split, rank, and
//! the threshold constant `C_α`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{
    basis_size, basis_size_1d, embed_window_1d, Detector1d, Detector1dConfig, DetectorConfig,
    MatrixDetector,
};
use crate::embedding::{CoordinateSplit, Embedder, IntensityMatrix, PointWindow};
use crate::error::{Error, Result};
use crate::lowrank::{frobenius, svd};
use crate::sim::derive_seed;

/// Default smoothness.
pub const DEFAULT_GAMMA: f64 = 2.0;
/// Default number of permutation replicates. Each scan replicate replays the
/// detector over half the training stream, so this is kept below the 500
/// often used for cheap two-sample statistics.
pub const DEFAULT_PERMUTATIONS: usize = 200;

/// Outcome of calibration; serialized as TOML so calibration and detection
/// can run as separate processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub version: u32,
    pub gamma: f64,
    pub window: usize,
    pub split: CoordinateSplit,
    pub rank: usize,
    pub basis_size: usize,
    pub threshold_const: f64,
    #[serde(default)]
    pub method: ThresholdMethod,
    pub alpha: f64,
    pub permutations: usize,
    pub seed: u64,
}

impl CalibrationReport {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.rank < 1 || self.permutations < 1 {
            return Err(Error::Config("rank and permutations must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.threshold_const >= 0.0) {
            return Err(Error::Config("threshold constant must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            gamma: self.gamma,
            split: self.split.clone(),
            rank: self.rank,
            window: self.window,
            threshold_const: self.threshold_const,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let report: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if report.version != 1 {
            return Err(Error::Config(format!(
                "unsupported calibration report version {}",
                report.version
            )));
        }
        report.validate()?;
        Ok(report)
    }
}

/// Pearson correlation matrix of the coordinates of all pooled points.
pub fn coordinate_correlations(training: &[PointWindow]) -> Result<Vec<Vec<f64>>> {
    let d = training.first().map_or(0, PointWindow::dim);
    let n: usize = training.iter().map(PointWindow::len).sum();
    if n < 2 {
        return Err(Error::InsufficientData { need: 2, got: n });
    }
    let mut mean = vec![0.0; d];
    for w in training {
        if w.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                got: w.dim(),
            });
        }
        for x in w.points() {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![vec![0.0; d]; d];
    for w in training {
        for x in w.points() {
            for i in 0..d {
                let a = x[i] - mean[i];
                for j in i..d {
                    cov[i][j] += a * (x[j] - mean[j]);
                }
            }
        }
    }
    if let Some(c) = (0..d).find(|&c| !(cov[c][c] > 0.0)) {
        return Err(Error::ZeroVariance(c));
    }
    let mut corr = vec![vec![1.0; d]; d];
    for i in 0..d {
        for j in i + 1..d {
            let r = cov[i][j] / (cov[i][i] * cov[j][j]).sqrt();
            corr[i][j] = r;
            corr[j][i] = r;
        }
    }
    Ok(corr)
}

/// Split minimizing the mean absolute cross-group correlation
/// `Δ(A, B) = (|A||B|)⁻¹ Σ_{i∈A, j∈B} |corr(i, j)|`.
///
/// `A` is the side containing coordinate 0; ties go to the
/// lexicographically smallest sorted `A`.
pub fn split_from_correlations(corr: &[Vec<f64>]) -> Result<(CoordinateSplit, f64)> {
    let d = corr.len();
    if d < 2 {
        return Err(Error::InvalidParameter(format!("need d ≥ 2 to split, got {d}")));
    }
    let mut best: Option<(Vec<usize>, Vec<usize>, f64)> = None;
    // Masks over coordinates 1..d; coordinate 0 always sits in A.
    for mask in 0u64..(1u64 << (d - 1)) - 1 {
        let a: Vec<usize> = std::iter::once(0)
            .chain((1..d).filter(|&c| mask >> (c - 1) & 1 == 1))
            .collect();
        let b: Vec<usize> = (1..d).filter(|&c| mask >> (c - 1) & 1 == 0).collect();
        let total: f64 = a
            .iter()
            .flat_map(|&i| b.iter().map(move |&j| corr[i][j].abs()))
            .sum();
        let delta = total / (a.len() * b.len()) as f64;
        let better = match &best {
            None => true,
            Some((ba, _, bd)) => {
                delta < *bd - 1e-12 || ((delta - *bd).abs() <= 1e-12 && a < *ba)
            }
        };
        if better {
            best = Some((a, b, delta));
        }
    }
    let (a, b, delta) = best.expect("at least one bipartition");
    Ok((CoordinateSplit::new(a, b)?, delta))
}

/// Correlation-based coordinate split of the pooled training points.
pub fn coordinate_split(training: &[PointWindow]) -> Result<CoordinateSplit> {
    let corr = coordinate_correlations(training)?;
    Ok(split_from_correlations(&corr)?.0)
}

/// Embeds every training window at basis size `m`.
pub fn embed_all(
    training: &[PointWindow],
    split: &CoordinateSplit,
    m: usize,
) -> Result<Vec<IntensityMatrix>> {
    let mut emb = Embedder::new(split.clone(), m)?;
    training.iter().map(|w| emb.embed(w)).collect()
}

fn even_prefix(n: usize) -> usize {
    n - n % 2
}

fn mean_of(mats: &[IntensityMatrix]) -> IntensityMatrix {
    let mut acc = IntensityMatrix::zeros(mats[0].rows(), mats[0].cols());
    for m in mats {
        acc.add_assign(m);
    }
    acc.scaled(1.0 / mats.len() as f64)
}

/// Sample-splitting rank criterion
/// `argmin_r ‖svd(Ŵ₁, r) − svd(Ŵ₂, r)‖_F`, smallest `r` on ties.
pub fn select_rank_from_halves(w1: &IntensityMatrix, w2: &IntensityMatrix) -> Result<usize> {
    let s1 = svd(w1)?;
    let s2 = svd(w2)?;
    let max_rank = w1.rows().min(w1.cols());
    let scale = frobenius(w1)?.max(frobenius(w2)?).max(f64::MIN_POSITIVE);
    let mut best = (1, f64::INFINITY);
    for r in 1..=max_rank {
        let obj = frobenius(&s1.reconstruct(r).sub(&s2.reconstruct(r)))?;
        if obj < best.1 - 1e-12 * scale {
            best = (r, obj);
        }
    }
    Ok(best.0)
}

/// Rank selection on already-embedded training windows.
pub fn select_rank_embedded(embedded: &[IntensityMatrix]) -> Result<usize> {
    let n = even_prefix(embedded.len());
    if n < 4 {
        return Err(Error::InsufficientData { need: 4, got: embedded.len() });
    }
    let w1 = mean_of(&embedded[..n / 2]);
    let w2 = mean_of(&embedded[n / 2..n]);
    select_rank_from_halves(&w1, &w2)
}

/// Rank selection from raw training windows, embedded at the calibration
/// basis size `⌈W^{1/(2γ + p∨q)}⌉`.
pub fn select_rank(
    training: &[PointWindow],
    gamma: f64,
    split: &CoordinateSplit,
    window: usize,
) -> Result<usize> {
    let m_cal = basis_size(window, 1, gamma, split.pq_max());
    select_rank_embedded(&embed_all(training, split, m_cal)?)
}

/// Permutation calibration on flat embeddings. `normalizer` divides each
/// `‖D̂_b‖_F`; returns the `⌈(1−α)B⌉`-th order statistic.
pub fn permutation_quantile(
    embedded: &[&[f64]],
    normalizer: f64,
    alpha: f64,
    permutations: usize,
    seed: u64,
) -> Result<f64> {
    if permutations < 1 {
        return Err(Error::InvalidParameter("need at least one permutation".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let n = even_prefix(embedded.len());
    if n < 4 {
        return Err(Error::InsufficientData { need: 4, got: embedded.len() });
    }
    let dim = embedded[0].len();
    let half = n / 2;
    let mut order: Vec<usize> = (0..n).collect();
    let mut diff = vec![0.0; dim];
    let mut stats: Vec<f64> = (0..permutations)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
            order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
            order.shuffle(&mut rng);
            diff.fill(0.0);
            for &i in &order[..half] {
                diff.iter_mut().zip(embedded[i]).for_each(|(d, v)| *d += v);
            }
            for &i in &order[half..] {
                diff.iter_mut().zip(embedded[i]).for_each(|(d, v)| *d -= v);
            }
            let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt() / half as f64;
            norm / normalizer
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    Ok(stats[order_statistic_index(alpha, permutations)])
}

/// 0-based index of the `⌈(1−α)B⌉`-th order statistic.
pub fn order_statistic_index(alpha: f64, permutations: usize) -> usize {
    let k = ((1.0 - alpha) * permutations as f64 - 1e-9).ceil() as usize;
    k.clamp(1, permutations) - 1
}

/// `(2r/N)^{γ/(2γ + p∨q)} ln N`.
pub fn permutation_normalizer(n_train: usize, rank: usize, gamma: f64, pq_max: usize) -> f64 {
    let n = even_prefix(n_train) as f64;
    (2.0 * rank as f64 / n).powf(gamma / (2.0 * gamma + pq_max as f64)) * n.ln()
}

/// Threshold constant `C_α` for the multivariate detector.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_threshold(
    training: &[PointWindow],
    rank: usize,
    gamma: f64,
    split: &CoordinateSplit,
    basis: usize,
    alpha: f64,
    permutations: usize,
    seed: u64,
) -> Result<f64> {
    let embedded = embed_all(training, split, basis)?;
    let flat: Vec<&[f64]> = embedded.iter().map(IntensityMatrix::as_slice).collect();
    let norm = permutation_normalizer(training.len(), rank, gamma, split.pq_max());
    permutation_quantile(&flat, norm, alpha, permutations, seed)
}

/// Threshold constant for the univariate detector, normalized by
/// `(2/N)^{γ/(2γ+1)} ln N`.
pub fn calibrate_threshold_1d(
    training: &[PointWindow],
    gamma: f64,
    window: usize,
    alpha: f64,
    permutations: usize,
    seed: u64,
) -> Result<f64> {
    let m = basis_size_1d(window, gamma);
    let embedded = training
        .iter()
        .map(|w| embed_window_1d(w, m))
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<&[f64]> = embedded.iter().map(Vec::as_slice).collect();
    let norm = permutation_normalizer(training.len(), 1, gamma, 1);
    permutation_quantile(&flat, norm, alpha, permutations, seed)
}

/// How `C_α` is derived from the training windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    /// Replays the online scan on permuted training windows and takes the
    /// quantile of the largest score-to-shape ratio.
    #[default]
    Scan,
    /// Single half-versus-half permutation statistic normalized at `N/2`.
    HalfSplit,
}

/// Sequential permutation calibration. Replicate `b` cuts the training
/// windows into consecutive blocks of length `block`, shuffles the block
/// order, renumbers the windows `1..=N`, and passes them to `peak`, which
/// should initialize a detector on the first half and return the largest
/// score-to-shape ratio over the second half. Returns the `⌈(1−α)B⌉`-th
/// order statistic of those maxima. Blocks keep short-range dependence
/// between neighbouring windows; `block = 1` is a plain shuffle.
pub fn scan_quantile<F>(
    training: &[PointWindow],
    block: usize,
    alpha: f64,
    permutations: usize,
    seed: u64,
    mut peak: F,
) -> Result<f64>
where
    F: FnMut(&[PointWindow]) -> Result<f64>,
{
    if permutations < 1 {
        return Err(Error::InvalidParameter("need at least one permutation".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    if block < 1 {
        return Err(Error::InvalidParameter("block length must be at least 1".into()));
    }
    let mut blocks: Vec<&[PointWindow]> = training.chunks(block).collect();
    let mut shuffled = Vec::with_capacity(training.len());
    let mut stats = Vec::with_capacity(permutations);
    for b in 0..permutations {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
        blocks.sort_by_key(|c| c[0].index);
        blocks.shuffle(&mut rng);
        shuffled.clear();
        for c in &blocks {
            shuffled.extend_from_slice(c);
        }
        for (i, w) in shuffled.iter_mut().enumerate() {
            w.index = i + 1;
        }
        stats.push(peak(&shuffled)?);
    }
    stats.sort_by(f64::total_cmp);
    Ok(stats[order_statistic_index(alpha, permutations)])
}

/// Block length `⌈N^{1/3}⌉` used by the scan calibration.
pub fn block_length(n_train: usize) -> usize {
    crate::lowrank::ceil_root(n_train as f64, 3.0)
}

fn check_scan_length(n: usize, window: usize) -> Result<()> {
    if n / 2 < window || n - n / 2 < 1 {
        return Err(Error::InsufficientData {
            need: 2 * window,
            got: n,
        });
    }
    Ok(())
}

/// Scan calibration of `C_α` for a multivariate detector configuration; the
/// configured constant is ignored.
pub fn scan_threshold(
    training: &[PointWindow],
    config: &DetectorConfig,
    alpha: f64,
    permutations: usize,
    seed: u64,
) -> Result<f64> {
    check_scan_length(training.len(), config.window)?;
    let half = training.len() / 2;
    scan_quantile(training, block_length(training.len()), alpha, permutations, seed, |seq| {
        let mut det = MatrixDetector::new(config.clone(), &seq[..half])?;
        seq[half..]
            .iter()
            .try_fold(0.0f64, |best, w| Ok(best.max(det.step_peak(w)?)))
    })
}

/// Scan calibration for the univariate detector.
pub fn scan_threshold_1d(
    training: &[PointWindow],
    gamma: f64,
    window: usize,
    alpha: f64,
    permutations: usize,
    seed: u64,
) -> Result<f64> {
    check_scan_length(training.len(), window)?;
    let half = training.len() / 2;
    let config = Detector1dConfig {
        gamma,
        window,
        threshold_const: 0.0,
    };
    scan_quantile(training, block_length(training.len()), alpha, permutations, seed, |seq| {
        let mut det = Detector1d::new(config.clone(), &seq[..half])?;
        seq[half..]
            .iter()
            .try_fold(0.0f64, |best, w| Ok(best.max(det.step_peak(w)?)))
    })
}

/// Calibration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub gamma: f64,
    pub window: usize,
    pub alpha: f64,
    pub permutations: usize,
    pub seed: u64,
    /// Fixed split; chosen from correlations when absent.
    #[serde(default)]
    pub split: Option<CoordinateSplit>,
    /// Fixed rank; selected by sample splitting when absent.
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub method: ThresholdMethod,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            window: 100,
            alpha: 0.05,
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            split: None,
            rank: None,
            method: ThresholdMethod::Scan,
        }
    }
}

/// Full pipeline: split, rank at the calibration basis size, then `C_α` at
/// the operational basis size `⌈(W/r̂)^{1/(2γ + p∨q)}⌉`.
pub fn calibrate(training: &[PointWindow], settings: &CalibrationSettings) -> Result<CalibrationReport> {
    if training.len() < settings.window {
        return Err(Error::InsufficientData {
            need: settings.window,
            got: training.len(),
        });
    }
    let split = match &settings.split {
        Some(s) => s.clone(),
        None => coordinate_split(training)?,
    };
    let rank = match settings.rank {
        Some(r) => r,
        None => select_rank(training, settings.gamma, &split, settings.window)?,
    };
    let basis = basis_size(settings.window, rank, settings.gamma, split.pq_max());
    let threshold_const = match settings.method {
        ThresholdMethod::HalfSplit => calibrate_threshold(
            training,
            rank,
            settings.gamma,
            &split,
            basis,
            settings.alpha,
            settings.permutations,
            settings.seed,
        )?,
        ThresholdMethod::Scan => {
            let config = DetectorConfig {
                gamma: settings.gamma,
                split: split.clone(),
                rank,
                window: settings.window,
                threshold_const: 0.0,
            };
            scan_threshold(
                training,
                &config,
                settings.alpha,
                settings.permutations,
                settings.seed,
            )?
        }
    };
    let report = CalibrationReport {
        version: 1,
        gamma: settings.gamma,
        window: settings.window,
        split,
        rank,
        basis_size: basis,
        threshold_const,
        method: settings.method,
        alpha: settings.alpha,
        permutations: settings.permutations,
        seed: settings.seed,
    };
    report.validate()?;
    Ok(report)
}
