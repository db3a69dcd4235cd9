//! Small dense SVD utilities and the restricted SVD score.
//!
//! Singular values come from one-sided (Hestenes) Jacobi rotations, which are
//! accurate to working precision for the few-dozen-entry matrices produced by
//! the embedding and need no allocation once a [`RestrictedScorer`] is warm.

use crate::embedding::IntensityMatrix;
use crate::error::{Error, Result};

const JACOBI_EPS: f64 = 1e-15;
const MAX_SWEEPS: usize = 60;

/// Thin SVD `D = U · diag(σ) · Vᵀ` with `σ` nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    /// `rows × k` left singular vectors, `k = min(rows, cols)`. Columns paired
    /// with a zero singular value are zero.
    pub u: IntensityMatrix,
    /// `cols × k` right singular vectors.
    pub v: IntensityMatrix,
}

impl SvdResult {
    /// `Σ_{k ≤ r} σ_k u_k v_kᵀ`.
    pub fn reconstruct(&self, r: usize) -> IntensityMatrix {
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = IntensityMatrix::zeros(m, n);
        for k in 0..r.min(self.singular_values.len()) {
            let s = self.singular_values[k];
            for i in 0..m {
                let a = s * self.u.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let e = out.get(i, j) + a * self.v.get(j, k);
                    out.set(i, j, e);
                }
            }
        }
        out
    }
}

/// Rotates the columns of a column-major `m × n` block until they are
/// mutually orthogonal, applying the same rotations to `v` (`n × n`,
/// column-major) when given.
fn jacobi_orthogonalize(a: &mut [f64], m: usize, n: usize, mut v: Option<&mut [f64]>) {
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                {
                    let ci = &a[i * m..(i + 1) * m];
                    let cj = &a[j * m..(j + 1) * m];
                    for (x, y) in ci.iter().zip(cj) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                }
                if gamma == 0.0 || gamma.abs() <= JACOBI_EPS * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(a, m, i, j, c, s);
                if let Some(v) = v.as_deref_mut() {
                    rotate(v, n, i, j, c, s);
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

#[inline]
fn rotate(buf: &mut [f64], len: usize, i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = buf.split_at_mut(j * len);
    let ci = &mut lo[i * len..(i + 1) * len];
    let cj = &mut hi[..len];
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

fn check_finite(d: &IntensityMatrix) -> Result<()> {
    if d.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Full thin SVD.
pub fn svd(d: &IntensityMatrix) -> Result<SvdResult> {
    check_finite(d)?;
    let (rows, cols) = (d.rows(), d.cols());
    // Orthogonalize the columns of whichever orientation is tall.
    let transposed = cols > rows;
    let (m, n) = if transposed { (cols, rows) } else { (rows, cols) };
    let mut a = vec![0.0; m * n];
    for i in 0..rows {
        for j in 0..cols {
            let (r, c) = if transposed { (j, i) } else { (i, j) };
            a[c * m + r] = d.get(i, j);
        }
    }
    let mut v = vec![0.0; n * n];
    for k in 0..n {
        v[k * n + k] = 1.0;
    }
    jacobi_orthogonalize(&mut a, m, n, Some(&mut v));

    let norms: Vec<f64> = (0..n)
        .map(|k| a[k * m..(k + 1) * m].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let mut left = IntensityMatrix::zeros(m, n);
    let mut right = IntensityMatrix::zeros(n, n);
    let mut sv = Vec::with_capacity(n);
    for (k, &src) in order.iter().enumerate() {
        let s = norms[src];
        sv.push(s);
        for i in 0..m {
            left.set(i, k, if s > 0.0 { a[src * m + i] / s } else { 0.0 });
        }
        for i in 0..n {
            right.set(i, k, v[src * n + i]);
        }
    }
    let (u, v) = if transposed { (right, left) } else { (left, right) };
    Ok(SvdResult {
        singular_values: sv,
        u,
        v,
    })
}

/// Singular values in nonincreasing order.
pub fn singular_values(d: &IntensityMatrix) -> Result<Vec<f64>> {
    check_finite(d)?;
    let mut scratch = Vec::new();
    let mut out = Vec::new();
    singular_values_into(d.as_slice(), d.rows(), d.cols(), &mut scratch, &mut out);
    Ok(out)
}

/// Singular values of a row-major block, reusing `scratch`.
fn singular_values_into(
    data: &[f64],
    rows: usize,
    cols: usize,
    scratch: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    let transposed = cols > rows;
    let (m, n) = if transposed { (cols, rows) } else { (rows, cols) };
    scratch.clear();
    scratch.resize(m * n, 0.0);
    for i in 0..rows {
        for j in 0..cols {
            let (r, c) = if transposed { (j, i) } else { (i, j) };
            scratch[c * m + r] = data[i * cols + j];
        }
    }
    jacobi_orthogonalize(scratch, m, n, None);
    out.clear();
    out.extend(
        (0..n).map(|k| scratch[k * m..(k + 1) * m].iter().map(|x| x * x).sum::<f64>().sqrt()),
    );
    out.sort_by(|x, y| y.total_cmp(x));
}

/// Best rank-`r` approximation `D[r]`.
pub fn truncated_svd(d: &IntensityMatrix, r: usize) -> Result<IntensityMatrix> {
    if r < 1 {
        return Err(Error::InvalidParameter("rank must be at least 1".into()));
    }
    Ok(svd(d)?.reconstruct(r))
}

pub fn frobenius(d: &IntensityMatrix) -> Result<f64> {
    check_finite(d)?;
    Ok(d.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Largest singular value.
pub fn operator_norm(d: &IntensityMatrix) -> Result<f64> {
    Ok(singular_values(d)?.first().copied().unwrap_or(0.0))
}

/// Smallest integer `m ≥ 1` with `m^degree ≥ ratio`, i.e. `⌈ratio^{1/degree}⌉`
/// computed without rounding drift at exact powers.
pub fn ceil_root(ratio: f64, degree: f64) -> usize {
    if ratio <= 1.0 {
        return 1;
    }
    let mut m = ratio.powf(1.0 / degree).ceil().max(1.0);
    while m > 1.0 && (m - 1.0).powf(degree) >= ratio * (1.0 - 1e-12) {
        m -= 1.0;
    }
    while m.powf(degree) < ratio * (1.0 - 1e-12) {
        m += 1.0;
    }
    m as usize
}

/// Adaptive trimming level `m = ⌈(n2/r)^{1/(2γ + p∨q)}⌉`, capped at `cap`.
pub fn trim_level(n2: usize, r: usize, gamma: f64, pq_max: usize, cap: usize) -> usize {
    ceil_root(n2 as f64 / r as f64, 2.0 * gamma + pq_max as f64).min(cap)
}

fn infer_basis_size(rows: usize, p: usize) -> Option<usize> {
    let guess = (rows as f64).powf(1.0 / p as f64).round() as usize;
    (guess.saturating_sub(1)..=guess + 1).find(|&m| m >= 1 && m.pow(p as u32) == rows)
}

/// Restricted SVD score: zero every row and column whose multi-index has an
/// entry above the trimming level, then return `‖svd(D, r)‖_F`.
pub fn restricted_svd_score(
    d: &IntensityMatrix,
    r: usize,
    n2: usize,
    p: usize,
    q: usize,
    gamma: f64,
) -> Result<f64> {
    check_finite(d)?;
    let m = infer_basis_size(d.rows(), p)
        .filter(|&m| m.pow(q as u32) == d.cols())
        .ok_or(Error::Dimension {
            expected: d.rows(),
            got: d.cols(),
        })?;
    let mut scorer = RestrictedScorer::new(m, p, q, r, gamma)?;
    Ok(scorer.score(d.as_slice(), n2))
}

/// Hot-path restricted SVD scorer with preallocated buffers.
#[derive(Debug, Clone)]
pub struct RestrictedScorer {
    basis_size: usize,
    p: usize,
    q: usize,
    rank: usize,
    gamma: f64,
    cols: usize,
    block: Vec<f64>,
    scratch: Vec<f64>,
    values: Vec<f64>,
    /// Kept row and column positions for each trim level `1..=M`.
    selections: Vec<(Vec<usize>, Vec<usize>)>,
    /// Trim level by `n2`, filled on demand.
    levels: Vec<usize>,
}

impl RestrictedScorer {
    pub fn new(basis_size: usize, p: usize, q: usize, rank: usize, gamma: f64) -> Result<Self> {
        if rank < 1 || basis_size < 1 || p < 1 || q < 1 {
            return Err(Error::InvalidParameter(
                "rank, basis size, p and q must be at least 1".into(),
            ));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(Self {
            basis_size,
            p,
            q,
            rank,
            gamma,
            cols: basis_size.pow(q as u32),
            block: Vec::new(),
            scratch: Vec::new(),
            values: Vec::new(),
            selections: (1..=basis_size)
                .map(|m| {
                    let (mut rows, mut cols) = (Vec::new(), Vec::new());
                    kept_positions(m, basis_size, p, &mut rows);
                    kept_positions(m, basis_size, q, &mut cols);
                    (rows, cols)
                })
                .collect(),
            levels: vec![0],
        })
    }

    pub fn trim_level(&self, n2: usize) -> usize {
        trim_level(n2, self.rank, self.gamma, self.p.max(self.q), self.basis_size)
    }

    /// Score of a row-major `M^p × M^q` matrix with post-segment length `n2`.
    pub fn score(&mut self, data: &[f64], n2: usize) -> f64 {
        let n2 = n2.max(1);
        while self.levels.len() <= n2 {
            let next = self.trim_level(self.levels.len());
            self.levels.push(next);
        }
        let m = self.levels[n2];
        // Surviving rows/cols are the multi-indices with every entry ≤ m; their
        // flat positions are Σ (e_j − 1) M^j over e_j ≤ m.
        let (row_sel, col_sel) = &self.selections[m - 1];
        let (br, bc) = (row_sel.len(), col_sel.len());
        self.block.clear();
        for &i in row_sel {
            let row = &data[i * self.cols..(i + 1) * self.cols];
            self.block.extend(col_sel.iter().map(|&j| row[j]));
        }
        if self.rank >= br.min(bc) {
            // Every singular value is kept.
            return self.block.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        if self.block.iter().all(|&v| v == 0.0) {
            return 0.0;
        }
        gram_into(&self.block, br, bc, &mut self.scratch);
        let n = br.min(bc);
        symmetric_eigenvalues(&mut self.scratch, n, &mut self.values);
        self.values
            .iter()
            .take(self.rank)
            .map(|&e| e.max(0.0))
            .sum::<f64>()
            .sqrt()
    }
}

/// Smaller Gram matrix (`BᵀB` or `BBᵀ`) of a row-major block, row-major.
fn gram_into(block: &[f64], rows: usize, cols: usize, out: &mut Vec<f64>) {
    let n = rows.min(cols);
    out.clear();
    out.resize(n * n, 0.0);
    for a in 0..n {
        for b in a..n {
            let v: f64 = if cols <= rows {
                (0..rows).map(|i| block[i * cols + a] * block[i * cols + b]).sum()
            } else {
                let (ra, rb) = (&block[a * cols..(a + 1) * cols], &block[b * cols..(b + 1) * cols]);
                ra.iter().zip(rb).map(|(x, y)| x * y).sum()
            };
            out[a * n + b] = v;
            out[b * n + a] = v;
        }
    }
}

/// Eigenvalues of a symmetric row-major `n × n` matrix by cyclic Jacobi
/// rotations, in nonincreasing order. `a` is overwritten.
fn symmetric_eigenvalues(a: &mut [f64], n: usize, out: &mut Vec<f64>) {
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= JACOBI_EPS * JACOBI_EPS * diag || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    out.clear();
    out.extend((0..n).map(|i| a[i * n + i]));
    out.sort_by(|x, y| y.total_cmp(x));
}

fn kept_positions(m: usize, basis: usize, group: usize, out: &mut Vec<usize>) {
    out.clear();
    out.push(0);
    let mut stride = 1;
    for _ in 0..group {
        let len = out.len();
        for e in 1..m {
            for i in 0..len {
                out.push(out[i] + e * stride);
            }
        }
        stride *= basis;
    }
    out.sort_unstable();
}
