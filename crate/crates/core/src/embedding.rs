//! Point windows and their empirical intensity matrices.
//!
//! A window's matrix has entry `(μ, η) = Σ_x Φ_μ(y) Ψ_η(z)` where `x = (y, z)`
//! under a [`CoordinateSplit`] and `Φ`, `Ψ` are tensor Legendre bases of
//! size `M^p` and `M^q`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::legendre::{fill_tensor, gauss_legendre};

/// One time-indexed realization: a finite point set in `[0, 1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointWindow {
    pub index: usize,
    dim: usize,
    coords: Vec<f64>,
}

impl PointWindow {
    pub fn empty(index: usize, dim: usize) -> Self {
        Self {
            index,
            dim,
            coords: Vec::new(),
        }
    }

    /// Builds a window from a flat coordinate buffer, validating the unit cube.
    pub fn from_flat(index: usize, dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::Dimension {
                expected: dim,
                got: coords.len(),
            });
        }
        if let Some(&bad) = coords.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Domain { value: bad });
        }
        Ok(Self { index, dim, coords })
    }

    pub fn from_points(index: usize, dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        let mut w = Self::empty(index, dim);
        for p in points {
            w.push(p)?;
        }
        Ok(w)
    }

    pub fn push(&mut self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: point.len(),
            });
        }
        if let Some(&bad) = point.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Domain { value: bad });
        }
        self.coords.extend_from_slice(point);
        Ok(())
    }

    /// Appends a point already known to lie in the unit cube.
    pub(crate) fn push_unchecked(&mut self, point: &[f64]) {
        debug_assert_eq!(point.len(), self.dim);
        self.coords.extend_from_slice(point);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim.max(1))
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }
}

/// Partition of the coordinates `{0, …, d−1}` into a row group `y` and a
/// column group `z`. Positions are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinateSplit {
    pub group_y: Vec<usize>,
    pub group_z: Vec<usize>,
}

impl CoordinateSplit {
    pub fn new(group_y: Vec<usize>, group_z: Vec<usize>) -> Result<Self> {
        let split = Self { group_y, group_z };
        split.validate()?;
        Ok(split)
    }

    /// First `p` coordinates as rows, the rest as columns.
    pub fn leading(p: usize, d: usize) -> Result<Self> {
        Self::new((0..p).collect(), (p..d).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_y.is_empty() || self.group_z.is_empty() {
            return Err(Error::InvalidParameter(
                "both coordinate groups must be nonempty".into(),
            ));
        }
        let d = self.dim();
        let mut seen = vec![false; d];
        for &c in self.group_y.iter().chain(&self.group_z) {
            if c >= d || seen[c] {
                return Err(Error::InvalidParameter(format!(
                    "coordinate split {:?}|{:?} is not a partition of 0..{d}",
                    self.group_y, self.group_z
                )));
            }
            seen[c] = true;
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.group_y.len()
    }

    pub fn q(&self) -> usize {
        self.group_z.len()
    }

    pub fn dim(&self) -> usize {
        self.p() + self.q()
    }

    pub fn pq_max(&self) -> usize {
        self.p().max(self.q())
    }
}

/// Dense row-major real matrix of basis coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl IntensityMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.cols + col] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Reusable window-to-matrix map for a fixed split and basis size.
#[derive(Debug, Clone)]
pub struct Embedder {
    split: CoordinateSplit,
    basis_size: usize,
    rows: usize,
    cols: usize,
    y: Vec<f64>,
    z: Vec<f64>,
    scratch: Vec<f64>,
    phi: Vec<f64>,
    psi: Vec<f64>,
}

impl Embedder {
    pub fn new(split: CoordinateSplit, basis_size: usize) -> Result<Self> {
        split.validate()?;
        if basis_size < 1 {
            return Err(Error::InvalidParameter("basis size must be at least 1".into()));
        }
        let rows = basis_size.pow(split.p() as u32);
        let cols = basis_size.pow(split.q() as u32);
        Ok(Self {
            y: vec![0.0; split.p()],
            z: vec![0.0; split.q()],
            scratch: vec![0.0; split.p().max(split.q()) * basis_size],
            phi: vec![0.0; rows],
            psi: vec![0.0; cols],
            split,
            basis_size,
            rows,
            cols,
        })
    }

    pub fn split(&self) -> &CoordinateSplit {
        &self.split
    }

    pub fn basis_size(&self) -> usize {
        self.basis_size
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn embed(&mut self, w: &PointWindow) -> Result<IntensityMatrix> {
        let mut out = IntensityMatrix::zeros(self.rows, self.cols);
        self.embed_into(w, &mut out)?;
        Ok(out)
    }

    /// Overwrites `out` with the window's intensity matrix.
    pub fn embed_into(&mut self, w: &PointWindow, out: &mut IntensityMatrix) -> Result<()> {
        if w.dim() != self.split.dim() {
            return Err(Error::Dimension {
                expected: self.split.dim(),
                got: w.dim(),
            });
        }
        debug_assert_eq!((out.rows, out.cols), (self.rows, self.cols));
        out.data.fill(0.0);
        let m = self.basis_size;
        for x in w.points() {
            for (dst, &c) in self.y.iter_mut().zip(&self.split.group_y) {
                *dst = x[c];
            }
            for (dst, &c) in self.z.iter_mut().zip(&self.split.group_z) {
                *dst = x[c];
            }
            fill_tensor(&self.y, m, &mut self.scratch, &mut self.phi);
            fill_tensor(&self.z, m, &mut self.scratch, &mut self.psi);
            for (row, &a) in out.data.chunks_exact_mut(self.cols).zip(&self.phi) {
                for (e, &b) in row.iter_mut().zip(&self.psi) {
                    *e += a * b;
                }
            }
        }
        Ok(())
    }
}

/// Empirical intensity matrix of one window.
pub fn embed_window(
    w: &PointWindow,
    split: &CoordinateSplit,
    basis_size: usize,
) -> Result<IntensityMatrix> {
    Embedder::new(split.clone(), basis_size)?.embed(w)
}

/// Population matrix `∫ λ(y, z) Φ_μ(y) Ψ_η(z)` by tensor Gauss–Legendre
/// quadrature with `quad_order` nodes per axis. `lambda` receives points in
/// the original coordinate order.
pub fn population_matrix<F>(
    lambda: F,
    split: &CoordinateSplit,
    basis_size: usize,
    quad_order: usize,
) -> Result<IntensityMatrix>
where
    F: Fn(&[f64]) -> f64,
{
    if quad_order < 2 {
        return Err(Error::InvalidParameter(format!(
            "quadrature order {quad_order} < 2"
        )));
    }
    let mut emb = Embedder::new(split.clone(), basis_size)?;
    let d = split.dim();
    let (nodes, weights) = gauss_legendre(quad_order);
    let mut acc = IntensityMatrix::zeros(emb.rows, emb.cols);
    let mut single = IntensityMatrix::zeros(emb.rows, emb.cols);
    let mut idx = vec![0usize; d];
    let mut node = PointWindow {
        index: 0,
        dim: d,
        coords: vec![0.0; d],
    };
    let total = quad_order.pow(d as u32);
    for _ in 0..total {
        let mut w = 1.0;
        for (j, &i) in idx.iter().enumerate() {
            node.coords[j] = nodes[i];
            w *= weights[i];
        }
        let lam = lambda(&node.coords);
        if !lam.is_finite() {
            return Err(Error::NonFinite);
        }
        if lam != 0.0 {
            emb.embed_into(&node, &mut single)?;
            for (a, b) in acc.data.iter_mut().zip(&single.data) {
                *a += w * lam * b;
            }
        }
        for i in idx.iter_mut() {
            *i += 1;
            if *i < quad_order {
                break;
            }
            *i = 0;
        }
    }
    Ok(acc)
}

/// Per-coordinate affine map into `[0, 1]`, frozen from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaleStats {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl RescaleStats {
    pub fn new(mins: Vec<f64>, maxs: Vec<f64>) -> Result<Self> {
        if mins.len() != maxs.len() {
            return Err(Error::Dimension {
                expected: mins.len(),
                got: maxs.len(),
            });
        }
        if let Some(c) = (0..mins.len()).find(|&c| !(maxs[c] > mins[c])) {
            return Err(Error::DegenerateRange(c));
        }
        Ok(Self { mins, maxs })
    }

    /// Column-wise min and max over raw points.
    pub fn fit<'a, I>(points: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut mins = vec![f64::INFINITY; dim];
        let mut maxs = vec![f64::NEG_INFINITY; dim];
        for p in points {
            for c in 0..dim {
                mins[c] = mins[c].min(p[c]);
                maxs[c] = maxs[c].max(p[c]);
            }
        }
        Self::new(mins, maxs)
    }

    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: raw.len(),
            });
        }
        Ok(raw
            .iter()
            .enumerate()
            .map(|(c, &v)| rescale_value(v, self.mins[c], self.maxs[c]))
            .collect())
    }
}

/// Affine map of one raw value onto `[0, 1]`, clamped.
pub fn rescale_value(raw: f64, min: f64, max: f64) -> f64 {
    ((raw - min) / (max - min)).clamp(0.0, 1.0)
}

/// Rescales raw points using frozen training ranges.
pub fn rescale_events(raw: &[Vec<f64>], stats: &RescaleStats) -> Result<Vec<Vec<f64>>> {
    raw.iter().map(|p| stats.apply(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legendre::{eval_univariate, flatten, MultiIndex};

    fn split21() -> CoordinateSplit {
        CoordinateSplit::leading(2, 3).unwrap()
    }

    #[test]
    fn empty_window_is_zero() {
        let w = PointWindow::empty(1, 3);
        let m = embed_window(&w, &split21(), 2).unwrap();
        assert_eq!((m.rows(), m.cols()), (4, 2));
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_point() {
        let w = PointWindow::from_points(1, 3, &[vec![0.5, 0.5, 0.5]]).unwrap();
        let m = embed_window(&w, &split21(), 2).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        for r in 0..4 {
            for c in 0..2 {
                if (r, c) != (0, 0) {
                    assert!(m.get(r, c).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn entries_match_definition() {
        let pts = vec![vec![0.1, 0.7, 0.3], vec![0.9, 0.2, 0.55]];
        let split = CoordinateSplit::new(vec![2, 0], vec![1]).unwrap();
        let w = PointWindow::from_points(1, 3, &pts).unwrap();
        let m = embed_window(&w, &split, 3).unwrap();
        for mu in 1..=9 {
            let iy = crate::legendre::unflatten(mu, 3, 2).unwrap();
            for eta in 1..=3 {
                let expected: f64 = pts
                    .iter()
                    .map(|x| {
                        eval_univariate(iy.entries()[0], x[2]).unwrap()
                            * eval_univariate(iy.entries()[1], x[0]).unwrap()
                            * eval_univariate(eta, x[1]).unwrap()
                    })
                    .sum();
                assert!((m.get(mu - 1, eta - 1) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn additive_over_points() {
        let p = vec![0.3, 0.8, 0.15];
        let one = PointWindow::from_points(1, 3, &[p.clone()]).unwrap();
        let two = PointWindow::from_points(1, 3, &[p.clone(), p]).unwrap();
        let a = embed_window(&one, &split21(), 3).unwrap();
        let b = embed_window(&two, &split21(), 3).unwrap();
        assert!(a.scaled(2.0).max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let w = PointWindow::from_points(1, 2, &[vec![0.3, 0.4]]).unwrap();
        assert!(matches!(
            embed_window(&w, &split21(), 2),
            Err(Error::Dimension { .. })
        ));
        let mut w = PointWindow::empty(1, 3);
        assert!(w.push(&[0.1, 1.2, 0.3]).is_err());
    }

    #[test]
    fn population_of_constant() {
        let m = population_matrix(|_| 5.0, &split21(), 3, 32).unwrap();
        for r in 0..9 {
            for c in 0..3 {
                let expected = if (r, c) == (0, 0) { 5.0 } else { 0.0 };
                assert!((m.get(r, c) - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn population_of_product_bump() {
        let phi2 = |x: f64| 3f64.sqrt() * (2.0 * x - 1.0);
        let lam = |x: &[f64]| 1.0 + 0.5 * phi2(x[0]) * phi2(x[1]) * phi2(x[2]);
        let m = population_matrix(lam, &split21(), 2, 32).unwrap();
        let mu = flatten(&MultiIndex::new(vec![2, 2]).unwrap(), 2).unwrap();
        for r in 0..4 {
            for c in 0..2 {
                let expected = match (r, c) {
                    (0, 0) => 1.0,
                    (r, 1) if r == mu - 1 => 0.5,
                    _ => 0.0,
                };
                assert!((m.get(r, c) - expected).abs() < 1e-10, "({r},{c})");
            }
        }
        assert!(population_matrix(lam, &split21(), 2, 1).is_err());
    }

    #[test]
    fn approximation_error_decreases_with_basis_size() {
        // ‖λ − λ_M‖² = ‖λ‖² − ‖M(λ)‖_F² by orthonormality.
        let lam = |x: &[f64]| x.iter().map(|v| v.sin() + 1.0).product::<f64>();
        let (nodes, weights) = gauss_legendre(32);
        let mut norm2 = 0.0;
        for (i, a) in nodes.iter().enumerate() {
            for (j, b) in nodes.iter().enumerate() {
                for (k, c) in nodes.iter().enumerate() {
                    norm2 += weights[i] * weights[j] * weights[k] * lam(&[*a, *b, *c]).powi(2);
                }
            }
        }
        let mut prev = f64::INFINITY;
        for m in 1..=6 {
            let pm = population_matrix(lam, &split21(), m, 32).unwrap();
            let coef2: f64 = pm.as_slice().iter().map(|v| v * v).sum();
            let err = (norm2 - coef2).max(0.0).sqrt();
            assert!(err <= prev + 1e-12, "M={m}: {err} > {prev}");
            prev = err;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_value(5.0, 0.0, 10.0), 0.5);
        assert_eq!(rescale_value(-1.0, 0.0, 10.0), 0.0);
        assert_eq!(rescale_value(0.0, 0.0, 10.0), 0.0);
        assert!(matches!(
            RescaleStats::new(vec![1.0], vec![1.0]),
            Err(Error::DegenerateRange(0))
        ));
        let stats = RescaleStats::new(vec![0.0, -2.0], vec![10.0, 2.0]).unwrap();
        let out = rescale_events(&[vec![5.0, 4.0]], &stats).unwrap();
        assert_eq!(out, vec![vec![0.5, 1.0]]);
    }

    #[test]
    fn split_validation() {
        assert!(CoordinateSplit::new(vec![0], vec![0]).is_err());
        assert!(CoordinateSplit::new(vec![], vec![0]).is_err());
        assert!(CoordinateSplit::new(vec![0, 3], vec![1]).is_err());
        assert!(CoordinateSplit::new(vec![2], vec![0, 1]).is_ok());
    }
}
