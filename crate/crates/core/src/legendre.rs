//! Orthonormal shifted Legendre polynomials on `[0, 1]` and their tensor
//! products.
//!
//! The univariate family is `φ_k(x) = √(2k−1) · P_{k−1}(2x − 1)` for `k ≥ 1`,
//! so `φ_1 ≡ 1` and `∫₀¹ φ_k = δ_{k1}`. Multi-indices over a coordinate group
//! are flattened lexicographically with the first coordinate varying fastest.

use crate::error::{Error, Result};

const DOMAIN_TOL: f64 = 1e-12;

fn check_unit(x: f64) -> Result<f64> {
    if !(-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&x) || x.is_nan() {
        return Err(Error::Domain { value: x });
    }
    Ok(x.clamp(0.0, 1.0))
}

/// Evaluates `φ_k(x)` with the Bonnet recurrence.
pub fn eval_univariate(k: usize, x: f64) -> Result<f64> {
    if k < 1 {
        return Err(Error::BasisIndex(k));
    }
    let x = check_unit(x)?;
    let t = 2.0 * x - 1.0;
    let (mut p_prev, mut p) = (1.0, t);
    if k == 1 {
        return Ok(1.0);
    }
    for n in 1..k - 1 {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * t * p - nf * p_prev) / (nf + 1.0);
        p_prev = p;
        p = next;
    }
    Ok(((2 * k - 1) as f64).sqrt() * p)
}

/// Writes `φ_1(x), …, φ_m(x)` into `out[..m]`. No domain check; `x` is
/// assumed to be in `[0, 1]`.
#[inline]
pub fn fill_univariate(x: f64, out: &mut [f64]) {
    let m = out.len();
    if m == 0 {
        return;
    }
    let t = 2.0 * x - 1.0;
    out[0] = 1.0;
    if m == 1 {
        return;
    }
    let (mut p_prev, mut p) = (1.0, t);
    out[1] = 3f64.sqrt() * t;
    for n in 1..m - 1 {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * t * p - nf * p_prev) / (nf + 1.0);
        p_prev = p;
        p = next;
        out[n + 1] = ((2 * n + 3) as f64).sqrt() * p;
    }
}

/// Multi-index `(i_1, …, i_g)` with 1-based entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    entries: Vec<usize>,
}

impl MultiIndex {
    pub fn new(entries: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = entries.iter().find(|&&e| e < 1) {
            return Err(Error::BasisIndex(bad));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn group_size(&self) -> usize {
        self.entries.len()
    }

    pub fn max_entry(&self) -> usize {
        self.entries.iter().copied().max().unwrap_or(0)
    }
}

/// Flat 1-based position of `idx` among the `m^g` multi-indices.
pub fn flatten(idx: &MultiIndex, m: usize) -> Result<usize> {
    let mut flat = 0usize;
    let mut stride = 1usize;
    for &e in idx.entries() {
        if e > m {
            return Err(Error::IndexRange { index: e, max: m });
        }
        flat += (e - 1) * stride;
        stride *= m;
    }
    Ok(flat + 1)
}

/// Inverse of [`flatten`].
pub fn unflatten(flat: usize, m: usize, group_size: usize) -> Result<MultiIndex> {
    let total = m.pow(group_size as u32);
    if flat < 1 || flat > total {
        return Err(Error::IndexRange {
            index: flat,
            max: total,
        });
    }
    let mut rest = flat - 1;
    let entries = (0..group_size)
        .map(|_| {
            let e = rest % m + 1;
            rest /= m;
            e
        })
        .collect();
    Ok(MultiIndex { entries })
}

/// Tensor-product basis function `Π_j φ_{idx_j}(point_j)`.
pub fn eval_tensor(idx: &MultiIndex, point: &[f64]) -> Result<f64> {
    if idx.group_size() != point.len() {
        return Err(Error::Dimension {
            expected: idx.group_size(),
            got: point.len(),
        });
    }
    idx.entries()
        .iter()
        .zip(point)
        .try_fold(1.0, |acc, (&k, &x)| Ok(acc * eval_univariate(k, x)?))
}

/// Evaluates every tensor basis function of a coordinate group at once, in
/// flat order. `coords` holds the group's coordinates, `scratch` must have
/// length `coords.len() * m`, and `out` length `m^coords.len()`.
pub(crate) fn fill_tensor(coords: &[f64], m: usize, scratch: &mut [f64], out: &mut [f64]) {
    for (j, &x) in coords.iter().enumerate() {
        fill_univariate(x, &mut scratch[j * m..(j + 1) * m]);
    }
    out[0] = 1.0;
    let mut len = 1;
    // Later coordinates form the slower blocks.
    for j in 0..coords.len() {
        let vals = &scratch[j * m..(j + 1) * m];
        for b in (0..m).rev() {
            let v = vals[b];
            for i in 0..len {
                out[b * len + i] = out[i] * v;
            }
        }
        len *= m;
    }
}

/// Gauss–Legendre nodes and weights mapped to `[0, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, t);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        nodes[i] = 0.5 * (1.0 - t);
        nodes[n - 1 - i] = 0.5 * (1.0 + t);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, t);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * t * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    (p1, nf * (t * p1 - p0) / (t * t - 1.0))
}
