//! Proximity operator of `R(f) = i_{≥0}(f) + ‖∇f‖_{2,1}`, computed by ADMM on
//! the split `q1 = ∇f`, `q2 = f`.
//!
//! `∇` uses periodic forward differences so that `(1+ρ2) I + ρ1 ∇ᵀ∇` is
//! diagonalized by the 2-D DFT and the `f`-update is a pointwise division.

use num_complex::Complex64;
use rustfft::FftDirection;
use std::f64::consts::PI;

use crate::error::{OdtError, Result};
use crate::fft::{Fft2, Scratch};

/// Forward differences, stored per pixel as `[∂x, ∂y]` (x along columns).
#[derive(Debug, Clone, PartialEq)]
pub struct GradField {
    pub values: Vec<[f64; 2]>,
}

impl GradField {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![[0.0; 2]; len],
        }
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|[a, b]| a * a + b * b)
            .sum::<f64>()
            .sqrt()
    }
}

fn side_of(len: usize) -> usize {
    let n = (len as f64).sqrt().round() as usize;
    assert_eq!(n * n, len, "image must be square");
    n
}

pub fn grad_op(f: &[f64]) -> GradField {
    let n = side_of(f.len());
    let mut out = GradField::zeros(f.len());
    for r in 0..n {
        let up = ((r + 1) % n) * n;
        for c in 0..n {
            let i = r * n + c;
            let right = r * n + (c + 1) % n;
            out.values[i] = [f[right] - f[i], f[up + c] - f[i]];
        }
    }
    out
}

/// `∇ᵀ q`, the exact transpose of [`grad_op`].
pub fn grad_adjoint(q: &GradField) -> Vec<f64> {
    let len = q.values.len();
    let n = side_of(len);
    let mut out = vec![0.0; len];
    for r in 0..n {
        let down = ((r + n - 1) % n) * n;
        for c in 0..n {
            let i = r * n + c;
            let left = r * n + (c + n - 1) % n;
            out[i] = q.values[left][0] - q.values[i][0] + q.values[down + c][1] - q.values[i][1];
        }
    }
    out
}

/// Discrete divergence, `−∇ᵀ`.
pub fn div_op(q: &GradField) -> Vec<f64> {
    grad_adjoint(q).into_iter().map(|v| -v).collect()
}

/// Isotropic total variation `Σ ‖(∇f)_n‖₂`.
pub fn tv(f: &[f64]) -> f64 {
    grad_op(f)
        .values
        .iter()
        .map(|[a, b]| (a * a + b * b).sqrt())
        .sum()
}

/// `(q)_+` componentwise.
pub fn prox_nonneg(q: &[f64]) -> Vec<f64> {
    q.iter().map(|v| v.max(0.0)).collect()
}

/// Row-wise group soft-thresholding `q (1 − γ/‖q_n‖)_+`.
pub fn prox_group_l21(q: &GradField, gamma: f64) -> GradField {
    GradField {
        values: q
            .values
            .iter()
            .map(|&[a, b]| {
                let norm = (a * a + b * b).sqrt();
                if norm <= gamma || norm == 0.0 {
                    [0.0, 0.0]
                } else {
                    let s = 1.0 - gamma / norm;
                    [a * s, b * s]
                }
            })
            .collect(),
    }
}

/// Objective of the prox problem, `½‖f − v‖² + μ TV(f)`, for feasible `f`.
pub fn prox_objective(f: &[f64], v: &[f64], mu: f64) -> f64 {
    let fit: f64 = f.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * fit + mu * tv(f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxParams {
    pub mu: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl ProxParams {
    pub fn new(mu: f64, rho1: f64, rho2: f64, max_iters: usize, rel_tol: f64) -> Result<Self> {
        let p = Self {
            mu,
            rho1,
            rho2,
            max_iters,
            rel_tol,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_mu(mu: f64) -> Result<Self> {
        Self::new(mu, 1.0, 1.0, 200, 1e-5)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !(pos(self.mu) && pos(self.rho1) && pos(self.rho2) && pos(self.rel_tol)) || self.max_iters == 0 {
            return Err(OdtError::InvalidInput(format!("invalid prox parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxOutcome {
    pub f: Vec<f64>,
    pub iterations: usize,
    /// `‖∇f − q1‖` per iteration.
    pub residual_grad: Vec<f64>,
    /// `‖f − q2‖` per iteration.
    pub residual_nonneg: Vec<f64>,
}

/// Reusable TV prox for one image size.
#[derive(Debug, Clone)]
pub struct TvProx {
    n: usize,
    fft: Fft2,
    /// eigenvalues of ∇ᵀ∇ in DFT order
    laplacian: Vec<f64>,
}

impl TvProx {
    pub fn new(n: usize) -> Self {
        let w: Vec<f64> = (0..n)
            .map(|k| 2.0 - 2.0 * (2.0 * PI * k as f64 / n as f64).cos())
            .collect();
        let mut laplacian = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                laplacian[r * n + c] = w[r] + w[c];
            }
        }
        Self {
            n,
            fft: Fft2::new(n),
            laplacian,
        }
    }

    /// Solves `((1+ρ2) I + ρ1 ∇ᵀ∇) x = rhs` by Fourier division.
    pub fn solve_a(&self, rhs: &[f64], rho1: f64, rho2: f64) -> Vec<f64> {
        let n = self.n;
        assert_eq!(rhs.len(), n * n);
        let mut buf: Vec<Complex64> = rhs.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut scratch = Scratch::default();
        self.fft.process(&mut buf, FftDirection::Forward, &mut scratch);
        let scale = 1.0 / (n * n) as f64;
        for (b, l) in buf.iter_mut().zip(&self.laplacian) {
            *b *= scale / (1.0 + rho2 + rho1 * l);
        }
        self.fft.process(&mut buf, FftDirection::Inverse, &mut scratch);
        buf.iter().map(|z| z.re).collect()
    }

    pub fn prox(&self, v: &[f64], params: &ProxParams) -> Result<ProxOutcome> {
        params.validate()?;
        let n = self.n;
        if v.len() != n * n {
            return Err(OdtError::DimensionMismatch {
                context: "prox",
                expected: n * n,
                found: v.len(),
            });
        }
        let ProxParams {
            mu,
            rho1,
            rho2,
            max_iters,
            rel_tol,
        } = *params;

        let mut f = v.to_vec();
        // q1⁰ = ∇f⁰, q2⁰ = f⁰, and the multipliers start at those same values
        let mut w1 = grad_op(&f);
        let mut w2 = f.clone();
        let mut outcome = ProxOutcome {
            f: Vec::new(),
            iterations: 0,
            residual_grad: Vec::new(),
            residual_nonneg: Vec::new(),
        };

        let mut grad_f = grad_op(&f);
        for k in 1..=max_iters {
            let shifted = GradField {
                values: grad_f
                    .values
                    .iter()
                    .zip(&w1.values)
                    .map(|(g, w)| [g[0] + w[0] / rho1, g[1] + w[1] / rho1])
                    .collect(),
            };
            let q1 = prox_group_l21(&shifted, mu / rho1);
            let shifted2: Vec<f64> = f.iter().zip(&w2).map(|(a, w)| a + w / rho2).collect();
            let q2 = prox_nonneg(&shifted2);

            let inner = GradField {
                values: q1
                    .values
                    .iter()
                    .zip(&w1.values)
                    .map(|(q, w)| [q[0] - w[0] / rho1, q[1] - w[1] / rho1])
                    .collect(),
            };
            let div = grad_adjoint(&inner);
            let rhs: Vec<f64> = (0..n * n)
                .map(|i| v[i] + rho1 * div[i] + rho2 * q2[i] - w2[i])
                .collect();
            let f_new = self.solve_a(&rhs, rho1, rho2);
            if !f_new.iter().all(|x| x.is_finite()) {
                return Err(OdtError::NonFinite("prox iterate".into()));
            }

            grad_f = grad_op(&f_new);
            let mut r1 = 0.0;
            for ((w, g), q) in w1.values.iter_mut().zip(&grad_f.values).zip(&q1.values) {
                let d = [g[0] - q[0], g[1] - q[1]];
                w[0] += rho1 * d[0];
                w[1] += rho1 * d[1];
                r1 += d[0] * d[0] + d[1] * d[1];
            }
            let mut r2 = 0.0;
            for ((w, a), q) in w2.iter_mut().zip(&f_new).zip(&q2) {
                let d = a - q;
                *w += rho2 * d;
                r2 += d * d;
            }
            outcome.residual_grad.push(r1.sqrt());
            outcome.residual_nonneg.push(r2.sqrt());

            let change: f64 = f_new
                .iter()
                .zip(&f)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let scale: f64 = f.iter().map(|a| a * a).sum::<f64>().sqrt();
            f = f_new;
            outcome.iterations = k;
            if change == 0.0 || change < rel_tol * scale {
                break;
            }
        }
        outcome.f = prox_nonneg(&f);
        Ok(outcome)
    }
}

/// One-shot `prox_{μR}(v)` on an `n × n` image.
pub fn prox_r(v: &[f64], params: &ProxParams) -> Result<Vec<f64>> {
    Ok(TvProx::new(side_of(v.len())).prox(v, params)?.f)
}

/// `((1+ρ2) I + ρ1 ∇ᵀ∇)⁻¹ rhs` on an `n × n` image.
pub fn fourier_solve_a(rhs: &[f64], rho1: f64, rho2: f64) -> Result<Vec<f64>> {
    if !(rho1 > 0.0 && rho2 > 0.0) {
        return Err(OdtError::InvalidInput("rho1 and rho2 must be positive".into()));
    }
    Ok(TvProx::new(side_of(rhs.len())).solve_a(rhs, rho1, rho2))
}

/// `((1+ρ2) I + ρ1 ∇ᵀ∇) x`, applied directly.
pub fn apply_a(x: &[f64], rho1: f64, rho2: f64) -> Vec<f64> {
    let lap = grad_adjoint(&grad_op(x));
    x.iter()
        .zip(&lap)
        .map(|(a, l)| (1.0 + rho2) * a + rho1 * l)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let f = vec![2.5; 36];
        assert!(grad_op(&f).values.iter().all(|g| g == &[0.0, 0.0]));
        assert_eq!(tv(&f), 0.0);
    }

    #[test]
    fn gradient_adjoint_identity() {
        let f = random(16, 1, -1.0, 1.0);
        let q = GradField {
            values: random(16, 2, -1.0, 1.0)
                .chunks(1)
                .zip(random(16, 3, -1.0, 1.0))
                .map(|(a, b)| [a[0], b])
                .collect(),
        };
        let lhs: f64 = grad_op(&f)
            .values
            .iter()
            .zip(&q.values)
            .map(|(a, b)| a[0] * b[0] + a[1] * b[1])
            .sum();
        let rhs: f64 = f.iter().zip(grad_adjoint(&q)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        let d = div_op(&q);
        assert!(d.iter().zip(grad_adjoint(&q)).all(|(a, b)| *a == -b));
    }

    #[test]
    fn impulse_laplacian_stencil() {
        let mut f = vec![0.0; 25];
        f[12] = 1.0;
        let l = grad_adjoint(&grad_op(&f));
        assert_eq!(l[12], 4.0);
        for &i in &[7, 11, 13, 17] {
            assert_eq!(l[i], -1.0);
        }
        assert!((l.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn nonneg_projection() {
        assert_eq!(prox_nonneg(&[-1.0, 2.0]), vec![0.0, 2.0]);
        let q = vec![0.0, 3.0, 1e-9];
        assert_eq!(prox_nonneg(&q), q);
        let once = prox_nonneg(&[-3.0, 0.5, -0.1]);
        assert_eq!(prox_nonneg(&once), once);
    }

    #[test]
    fn group_shrinkage() {
        let q = GradField {
            values: vec![[3.0, 4.0], [0.3, 0.4], [0.0, 0.0]],
        };
        let out = prox_group_l21(&q, 1.0);
        assert!((out.values[0][0] - 2.4).abs() < 1e-15 && (out.values[0][1] - 3.2).abs() < 1e-15);
        assert_eq!(out.values[1], [0.0, 0.0]);
        assert_eq!(out.values[2], [0.0, 0.0]);
        let tiny = prox_group_l21(&q, 1e-15);
        assert!((tiny.values[0][0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn fourier_solve_edge_cases() {
        let z = fourier_solve_a(&[0.0; 16], 1.0, 1.0).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        let c = fourier_solve_a(&[3.0; 16], 0.7, 2.0).unwrap();
        assert!(c.iter().all(|v| (v - 1.0).abs() < 1e-14));
        assert!(fourier_solve_a(&[1.0; 4], 0.0, 1.0).is_err());
    }

    #[test]
    fn constant_positive_input_is_fixed_point() {
        let v = vec![1.7; 64];
        let out = prox_r(&v, &ProxParams::with_mu(0.5).unwrap()).unwrap();
        for o in out {
            assert!((o - 1.7).abs() < 1e-9);
        }
    }
}
