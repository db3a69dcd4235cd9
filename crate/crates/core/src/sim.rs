//! Synthetic Poisson point process time series.
//!
//! Every window is drawn by thinning a homogeneous proposal. Temporal
//! dependence enters through latent drivers: a bivariate AR(1) for the 3D
//! scenario and a count-fed scalar AR for the 4D scenario.
//!
//! Seeding: all randomness derives from one `u64`. The latent chain reads
//! ChaCha stream 0 and window `t` reads its own stream `t`, so regenerating
//! with a different change point leaves every earlier window bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::embedding::PointWindow;
use crate::error::{Error, Result};

/// Latent-chain burn-in before window 1.
pub const BURN_IN: usize = 200;

/// AR matrix of the 3D latent driver.
pub const AR_3D: [[f64; 2]; 2] = [[0.5, 0.1], [0.1, 0.5]];
/// Mean of the 3D innovations.
pub const AR_3D_SHIFT: [f64; 2] = [3.0, 1.0];

/// Draws one window by thinning. Points are proposed from a homogeneous
/// process of rate `lambda_max` on the unit cube and kept with probability
/// `λ(x)/λ_max`.
pub fn sample_ppp<F, R>(
    lambda: F,
    lambda_max: f64,
    dim: usize,
    index: usize,
    rng: &mut R,
) -> Result<PointWindow>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let mut w = PointWindow::empty(index, dim);
    if !(lambda_max > 0.0) {
        return Ok(w);
    }
    let count = Poisson::new(lambda_max)
        .map_err(|e| Error::InvalidParameter(format!("poisson rate {lambda_max}: {e}")))?
        .sample(rng) as usize;
    let mut x = vec![0.0; dim];
    for _ in 0..count {
        for c in x.iter_mut() {
            *c = rng.random::<f64>();
        }
        let lam = lambda(&x);
        if lam > lambda_max * (1.0 + 1e-12) || !lam.is_finite() {
            return Err(Error::BoundViolated {
                value: lam,
                bound: lambda_max,
            });
        }
        if rng.random::<f64>() * lambda_max < lam {
            w.push_unchecked(&x);
        }
    }
    Ok(w)
}

/// Scenario families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Homogeneous intensity `rate` before and `post_rate` after the change.
    ConstIntensity {
        dim: usize,
        rate: f64,
        #[serde(default)]
        post_rate: Option<f64>,
    },
    /// Latent-AR mixture on `[0,1]^3`. After the change the intensity is
    /// `(1−s)·λ_pre + s·λ_post`, with `s = change_scale` (1 by default).
    Scenario3d {
        #[serde(default = "one")]
        change_scale: f64,
    },
    /// Count-fed AR scale on `[0,1]^4`.
    Scenario4d,
    /// `λ = base` before, `base + amplitude·φ_2(x)` after, on `[0,1]`.
    Bump1d { base: f64, amplitude: f64 },
}

fn one() -> f64 {
    1.0
}

impl ScenarioKind {
    pub fn dim(&self) -> usize {
        match self {
            Self::ConstIntensity { dim, .. } => *dim,
            Self::Scenario3d { .. } => 3,
            Self::Scenario4d => 4,
            Self::Bump1d { .. } => 1,
        }
    }
}

/// A reproducible stream specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(flatten)]
    pub kind: ScenarioKind,
    pub n_train: usize,
    pub n_total: usize,
    /// Last pre-change window `𝔟`, if a change is planted.
    #[serde(default)]
    pub change_at: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_train > self.n_total {
            return Err(Error::InvalidParameter(format!(
                "need 0 < n_train ≤ n_total, got {} and {}",
                self.n_train, self.n_total
            )));
        }
        if let Some(b) = self.change_at {
            if !(self.n_train < b && b < self.n_total) {
                return Err(Error::InvalidParameter(format!(
                    "change point {b} must lie strictly between n_train {} and n_total {}",
                    self.n_train, self.n_total
                )));
            }
        }
        if let ScenarioKind::ConstIntensity { rate, post_rate, .. } = &self.kind {
            if !(*rate >= 0.0) || post_rate.is_some_and(|r| !(r >= 0.0)) {
                return Err(Error::InvalidParameter("rates must be nonnegative".into()));
            }
        }
        if let ScenarioKind::Bump1d { base, amplitude } = &self.kind {
            if *base < amplitude.abs() * 3f64.sqrt() {
                return Err(Error::InvalidParameter(
                    "bump amplitude would make the intensity negative".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    fn is_post(&self, t: usize) -> bool {
        self.change_at.is_some_and(|b| t > b)
    }

    /// Generates windows `1..=n_total`.
    pub fn generate(&self) -> Result<Vec<PointWindow>> {
        self.validate()?;
        match &self.kind {
            ScenarioKind::ConstIntensity { dim, rate, post_rate } => {
                let post = post_rate.unwrap_or(*rate);
                (1..=self.n_total)
                    .map(|t| {
                        let r = if self.is_post(t) { post } else { *rate };
                        sample_ppp(|_| r, r, *dim, t, &mut window_rng(self.seed, t))
                    })
                    .collect()
            }
            ScenarioKind::Scenario3d { change_scale } => self.generate_3d(*change_scale),
            ScenarioKind::Scenario4d => self.generate_4d(),
            ScenarioKind::Bump1d { base, amplitude } => (1..=self.n_total)
                .map(|t| {
                    let a = if self.is_post(t) { *amplitude } else { 0.0 };
                    let bound = base + a.abs() * 3f64.sqrt();
                    let lam = |x: &[f64]| base + a * 3f64.sqrt() * (2.0 * x[0] - 1.0);
                    sample_ppp(lam, bound, 1, t, &mut window_rng(self.seed, t))
                })
                .collect(),
        }
    }

    fn generate_3d(&self, scale: f64) -> Result<Vec<PointWindow>> {
        let mut latent = latent_rng(self.seed);
        let mut z = [0.0, 0.0];
        for _ in 0..BURN_IN {
            z = ar3d_step(z, &mut latent);
        }
        let mut out = Vec::with_capacity(self.n_total);
        for t in 1..=self.n_total {
            let zp = [z[0].max(0.0), z[1].max(0.0)];
            let mut rng = window_rng(self.seed, t);
            let w = if self.is_post(t) {
                let s = scale;
                let bound = (1.0 - s).abs() * pre_bound_3d(zp) + s.abs() * post_bound_3d(zp);
                sample_ppp(
                    |x| (1.0 - s) * intensity_3d_pre(x, zp) + s * intensity_3d_post(x, zp),
                    bound,
                    3,
                    t,
                    &mut rng,
                )?
            } else {
                sample_ppp(|x| intensity_3d_pre(x, zp), pre_bound_3d(zp), 3, t, &mut rng)?
            };
            out.push(w);
            z = ar3d_step(z, &mut latent);
        }
        Ok(out)
    }

    fn generate_4d(&self) -> Result<Vec<PointWindow>> {
        let mut latent = latent_rng(self.seed);
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let mean_mass = intensity_4d_mass();
        let mut y: f64 = 0.0;
        for _ in 0..BURN_IN {
            let rate = y.max(0.0) * mean_mass;
            let count = if rate > 0.0 {
                Poisson::new(rate).expect("positive rate").sample(&mut latent)
            } else {
                0.0
            };
            y = 0.1 * count + 8.0 + noise.sample(&mut latent);
        }
        let mut out = Vec::with_capacity(self.n_total);
        for t in 1..=self.n_total {
            let yp = y.max(0.0);
            let w = sample_ppp(
                |x| intensity_4d(x, yp),
                32.0 * yp,
                4,
                t,
                &mut window_rng(self.seed, t),
            )?;
            let intercept = if self.is_post(t) { 4.0 } else { 8.0 };
            y = 0.1 * w.len() as f64 + intercept + noise.sample(&mut latent);
            out.push(w);
        }
        Ok(out)
    }
}

/// Per-window random stream.
pub fn window_rng(seed: u64, window: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(window as u64);
    rng
}

fn latent_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

/// Derives an independent seed for replication `rep` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, rep: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(rep.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One step of `z ← A z + ε`, `ε ~ N([3, 1], I₂)`.
pub fn ar3d_step<R: Rng + ?Sized>(z: [f64; 2], rng: &mut R) -> [f64; 2] {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let e0 = AR_3D_SHIFT[0] + n.sample(rng);
    let e1 = AR_3D_SHIFT[1] + n.sample(rng);
    [
        AR_3D[0][0] * z[0] + AR_3D[0][1] * z[1] + e0,
        AR_3D[1][0] * z[0] + AR_3D[1][1] * z[1] + e1,
    ]
}

/// Stationary mean of the 3D latent chain, `(I − A)⁻¹ [3, 1]ᵀ`.
pub fn ar3d_stationary_mean() -> [f64; 2] {
    let (a, b, c, d) = (
        1.0 - AR_3D[0][0],
        -AR_3D[0][1],
        -AR_3D[1][0],
        1.0 - AR_3D[1][1],
    );
    let det = a * d - b * c;
    [
        (d * AR_3D_SHIFT[0] - b * AR_3D_SHIFT[1]) / det,
        (a * AR_3D_SHIFT[1] - c * AR_3D_SHIFT[0]) / det,
    ]
}

/// `z⁺₁ Π(sin x_j + 1) + z⁺₂ Π(cos x_j + 1)`.
pub fn intensity_3d_pre(x: &[f64], zp: [f64; 2]) -> f64 {
    let a: f64 = x.iter().map(|v| v.sin() + 1.0).product();
    let b: f64 = x.iter().map(|v| v.cos() + 1.0).product();
    zp[0] * a + zp[1] * b
}

/// `z⁺₁ Π exp(−x_j²) + z⁺₂ Π x_j`.
pub fn intensity_3d_post(x: &[f64], zp: [f64; 2]) -> f64 {
    let a: f64 = x.iter().map(|v| (-v * v).exp()).product();
    let b: f64 = x.iter().product();
    zp[0] * a + zp[1] * b
}

pub fn pre_bound_3d(zp: [f64; 2]) -> f64 {
    8.0 * (zp[0] + zp[1])
}

pub fn post_bound_3d(zp: [f64; 2]) -> f64 {
    zp[0] + zp[1]
}

/// `y⁺ {Π 2x_j³ + Π 2 exp(−x_j)}`.
pub fn intensity_4d(x: &[f64], yp: f64) -> f64 {
    let a: f64 = x.iter().map(|v| 2.0 * v.powi(3)).product();
    let b: f64 = x.iter().map(|v| 2.0 * (-v).exp()).product();
    yp * (a + b)
}

/// `∫_{[0,1]^4} Π 2x³ + Π 2e^{−x} dx = (1/2)^4 + (2(1 − e^{−1}))^4`.
pub fn intensity_4d_mass() -> f64 {
    0.5f64.powi(4) + (2.0 * (1.0 - (-1.0f64).exp())).powi(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_intensity_gives_empty_windows() {
        let mut rng = window_rng(1, 1);
        for _ in 0..100 {
            assert!(sample_ppp(|_| 0.0, 5.0, 2, 1, &mut rng).unwrap().is_empty());
        }
        assert!(sample_ppp(|_| 1.0, 0.0, 2, 1, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn bound_violation_is_an_error() {
        let mut rng = window_rng(2, 1);
        let r = sample_ppp(|_| 10.0, 5.0, 2, 1, &mut rng);
        assert!(matches!(r, Err(Error::BoundViolated { .. })));
    }

    #[test]
    fn homogeneous_count_mean() {
        let mut rng = window_rng(3, 1);
        let n = 5000;
        let total: usize = (0..n)
            .map(|_| sample_ppp(|_| 7.0, 7.0, 3, 1, &mut rng).unwrap().len())
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 7.0).abs() < 4.0 * (7.0 / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn linear_intensity_box_counts() {
        let mut rng = window_rng(4, 1);
        let n = 5000;
        let mut total = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n);
        for _ in 0..n {
            let w = sample_ppp(|x| 6.0 * x[0], 6.0, 1, 1, &mut rng).unwrap();
            total.push(w.len() as f64);
            lower.push(w.coords().iter().filter(|&&x| x <= 0.5).count() as f64);
        }
        for (samples, mean) in [(&total, 3.0), (&lower, 0.75)] {
            let m = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((m - mean).abs() < 4.0 * se, "{m} vs {mean}");
            // Poisson: variance equals the mean.
            let var_se = (2.0 * mean * mean / n as f64 + mean / n as f64).sqrt();
            assert!((var - mean).abs() < 4.0 * var_se, "var {var} vs {mean}");
        }
    }

    #[test]
    fn scenario_intensity_values() {
        let zp = [1.3, 0.7];
        assert!((intensity_3d_pre(&[0.0; 3], zp) - (1.3 + 0.7 * 8.0)).abs() < 1e-12);
        assert_eq!(intensity_3d_pre(&[0.4, 0.2, 0.9], [0.0, 0.0]), 0.0);
        let v = intensity_4d(&[1.0; 4], 2.0);
        assert!((v - 2.0 * (16.0 + 16.0 * (-4.0f64).exp())).abs() < 1e-12);
        assert_eq!(intensity_4d(&[0.3; 4], 0.0), 0.0);
    }

    #[test]
    fn stationary_mean_solves_linear_system() {
        let m = ar3d_stationary_mean();
        // (I − A) m = [3, 1] solved by hand: m = [1.6, 0.8] / 0.24.
        assert!((m[0] - 20.0 / 3.0).abs() < 1e-12);
        assert!((m[1] - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn first_product_mass_4d() {
        // ∫ Π 2x³ over [0,1]^4 by a midpoint rule per axis.
        let n = 20_000;
        let axis: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                2.0 * x.powi(3)
            })
            .sum::<f64>()
            / n as f64;
        assert!((axis.powi(4) - 0.0625).abs() < 1e-8);
        assert!((intensity_4d_mass() - 0.0625 - (2.0 * (1.0 - (-1.0f64).exp())).powi(4)).abs() < 1e-15);
    }

    #[test]
    fn thinning_bounds_hold() {
        let zp = [2.0, 3.0];
        for i in 0..=10 {
            for j in 0..=10 {
                for k in 0..=10 {
                    let x = [i as f64 / 10.0, j as f64 / 10.0, k as f64 / 10.0];
                    assert!(intensity_3d_pre(&x, zp) <= pre_bound_3d(zp));
                    assert!(intensity_3d_post(&x, zp) <= post_bound_3d(zp));
                    let x4 = [x[0], x[1], x[2], 0.5];
                    assert!(intensity_4d(&x4, 1.0) <= 32.0);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let s = Scenario {
            kind: ScenarioKind::Scenario4d,
            n_train: 20,
            n_total: 40,
            change_at: Some(30),
            seed: 9,
        };
        assert_eq!(s.generate().unwrap(), s.generate().unwrap());
    }

    #[test]
    fn change_leaves_prefix_untouched() {
        for kind in [ScenarioKind::Scenario3d { change_scale: 1.0 }, ScenarioKind::Scenario4d] {
            let with = Scenario {
                kind: kind.clone(),
                n_train: 20,
                n_total: 50,
                change_at: Some(30),
                seed: 17,
            };
            let without = Scenario {
                change_at: None,
                ..with.clone()
            };
            let a = with.generate().unwrap();
            let b = without.generate().unwrap();
            assert_eq!(a[..30], b[..30]);
            assert_ne!(a[30..], b[30..]);
        }
    }

    #[test]
    fn latent_chain_autocorrelation_decays() {
        // Project on the leading eigenvector (1,1)/√2 of A (eigenvalue 0.6).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut z = ar3d_stationary_mean();
        let n = 200_000;
        let mut s = Vec::with_capacity(n);
        for _ in 0..n {
            z = ar3d_step(z, &mut rng);
            s.push((z[0] + z[1]) / 2f64.sqrt());
        }
        let mean = s.iter().sum::<f64>() / n as f64;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        for lag in 1..=4 {
            let cov = s
                .iter()
                .zip(&s[lag..])
                .map(|(a, b)| (a - mean) * (b - mean))
                .sum::<f64>()
                / (n - lag) as f64;
            let rho = cov / var;
            assert!((rho - 0.6f64.powi(lag as i32)).abs() < 0.02, "lag {lag}: {rho}");
        }
    }

    #[test]
    fn scenario_validation() {
        let bad = Scenario {
            kind: ScenarioKind::Scenario4d,
            n_train: 20,
            n_total: 40,
            change_at: Some(10),
            seed: 0,
        };
        assert!(bad.generate().is_err());
        let neg = Scenario {
            kind: ScenarioKind::Bump1d {
                base: 1.0,
                amplitude: 1.0,
            },
            n_train: 5,
            n_total: 10,
            change_at: None,
            seed: 0,
        };
        assert!(neg.validate().is_err());
    }
}
