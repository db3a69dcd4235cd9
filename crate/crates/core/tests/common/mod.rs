//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use ppp_cusum::detector::{DetectorConfig, MatrixDetector};
use ppp_cusum::embedding::{CoordinateSplit, IntensityMatrix, PointWindow};

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `√(2k−1) P_{k−1}(2x−1)` from the explicit sum
/// `P_n(t) = Σ_i C(n,i)² ((t−1)/2)^{n−i} ((t+1)/2)^i`.
pub fn phi(k: usize, x: f64) -> f64 {
    let n = k - 1;
    let t = 2.0 * x - 1.0;
    let (a, b) = ((t - 1.0) / 2.0, (t + 1.0) / 2.0);
    let p: f64 = (0..=n)
        .map(|i| binomial(n, i).powi(2) * a.powi((n - i) as i32) * b.powi(i as i32))
        .sum();
    ((2 * k - 1) as f64).sqrt() * p
}

/// Tensor basis over `coords` at flat position `flat` (first coordinate
/// varies fastest).
pub fn tensor(flat: usize, m: usize, coords: &[f64]) -> f64 {
    let mut rest = flat;
    let mut v = 1.0;
    for &x in coords {
        v *= phi(rest % m + 1, x);
        rest /= m;
    }
    v
}

/// Entry-by-entry embedding of a window.
pub fn embed(w: &PointWindow, split: &CoordinateSplit, m: usize) -> DMatrix<f64> {
    let rows = m.pow(split.p() as u32);
    let cols = m.pow(split.q() as u32);
    let mut out = DMatrix::zeros(rows, cols);
    for x in w.points() {
        let y: Vec<f64> = split.group_y.iter().map(|&c| x[c]).collect();
        let z: Vec<f64> = split.group_z.iter().map(|&c| x[c]).collect();
        for mu in 0..rows {
            let a = tensor(mu, m, &y);
            for eta in 0..cols {
                out[(mu, eta)] += a * tensor(eta, m, &z);
            }
        }
    }
    out
}

pub fn to_dmatrix(m: &IntensityMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_flat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// Singular values, nonincreasing, via the eigenvalues of `DᵀD`.
pub fn singular_values(d: &DMatrix<f64>) -> Vec<f64> {
    let g = d.transpose() * d;
    let mut s: Vec<f64> = g
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&e| e.max(0.0).sqrt())
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.truncate(d.nrows().min(d.ncols()));
    s
}

/// Smallest integer `m` with `r · m^e ≥ n2`, capped at `cap`.
pub fn trim_level(n2: usize, r: usize, exponent: u32, cap: usize) -> usize {
    let mut m = 1usize;
    while r * m.pow(exponent) < n2 {
        m += 1;
    }
    m.min(cap)
}

/// Keeps rows and columns whose tensor multi-index entries are all at most
/// `level`, then returns the Frobenius norm of the best rank-`r` part.
pub fn restricted_score(d: &DMatrix<f64>, m: usize, p: usize, q: usize, level: usize, r: usize) -> f64 {
    let keep = |flat: usize, g: usize| {
        let mut rest = flat;
        (0..g).all(|_| {
            let e = rest % m + 1;
            rest /= m;
            e <= level
        })
    };
    let rows: Vec<usize> = (0..d.nrows()).filter(|&i| keep(i, p)).collect();
    let cols: Vec<usize> = (0..d.ncols()).filter(|&j| keep(j, q)).collect();
    let block = DMatrix::from_fn(rows.len(), cols.len(), |i, j| d[(rows[i], cols[j])]);
    singular_values(&block)
        .iter()
        .take(r)
        .map(|s| s * s)
        .sum::<f64>()
        .sqrt()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Steps a never-alarming detector over `windows[n_train..]` and compares
/// every `L[k]`, `R[k]`, CUSUM matrix and score with sums recomputed from
/// scratch. Returns the largest absolute discrepancy. The oracle trims with
/// integer arithmetic, so `2γ + p∨q` must be an integer.
pub fn streaming_discrepancy(windows: &[PointWindow], n_train: usize, config: &DetectorConfig) -> f64 {
    let mut config = config.clone();
    config.threshold_const = f64::MAX;
    let m = config.basis_size();
    let (p, q) = (config.split.p(), config.split.q());
    let (rows, cols) = (m.pow(p as u32), m.pow(q as u32));
    let exponent = (2.0 * config.gamma) as u32 + config.split.pq_max() as u32;
    assert_eq!(exponent as f64, 2.0 * config.gamma + config.split.pq_max() as f64);
    let w = config.window;
    let embedded: Vec<DMatrix<f64>> = windows.iter().map(|x| embed(x, &config.split, m)).collect();
    // cumulative[t] = Σ_{i ≤ t} E_i, built once from the oracle embeddings.
    let mut cumulative = vec![DMatrix::zeros(rows, cols)];
    for e in &embedded {
        let next = cumulative.last().unwrap() + e;
        cumulative.push(next);
    }
    let sum = |a: usize, b: usize| &cumulative[b] - &cumulative[a - 1];
    let mut det = MatrixDetector::new(config.clone(), &windows[..n_train]).unwrap();
    det.set_tracing(true);
    let mut worst = 0.0f64;
    for (i, x) in windows[n_train..].iter().enumerate() {
        let j = n_train + i + 1;
        assert!(det.step(x).unwrap().is_none());
        let evals = det.last_evaluations();
        assert_eq!(evals.len(), w);
        for (k, (l, r)) in det.prefix_sums().zip(det.suffix_sums()).enumerate() {
            let k = k + 1;
            let l_ref = sum(1, j - w + k - 1);
            let r_ref = sum(j - w + k, j);
            worst = worst.max(max_abs_diff(&from_flat(rows, cols, l), &l_ref));
            worst = worst.max(max_abs_diff(&from_flat(rows, cols, r), &r_ref));
            let (n1, n2) = (j - w - 1 + k, w - k + 1);
            let ev = &evals[k - 1];
            assert_eq!((ev.offset, ev.n1, ev.n2), (k, n1, n2));
            let d_ref = l_ref / n1 as f64 - r_ref / n2 as f64;
            worst = worst.max(max_abs_diff(&from_flat(rows, cols, &ev.diff), &d_ref));
            let level = trim_level(n2, config.rank, exponent, m);
            let s_ref = restricted_score(&d_ref, m, p, q, level, config.rank);
            worst = worst.max((ev.score - s_ref).abs());
        }
    }
    worst
}
