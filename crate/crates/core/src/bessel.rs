//! Cylinder functions of real argument.
//!
//! Orders 0 and 1 use the ascending power series up to `x = 8` and the Hankel
//! asymptotic expansion beyond, for an absolute accuracy of about 1e-7.
//! Arbitrary integer orders are derived from those: `J_m` by Miller's downward
//! recurrence normalized through the Wronskian `J1 Y0 − J0 Y1 = 2/(πx)`, and
//! `Y_m` by upward recurrence.

use num_complex::Complex64;
use std::f64::consts::{FRAC_2_PI, PI};

use crate::error::{OdtError, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const SERIES_LIMIT: f64 = 8.0;

/// `J0, Y0, J1, Y1` at one argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselJY01 {
    pub j0: f64,
    pub y0: f64,
    pub j1: f64,
    pub y1: f64,
}

fn check_positive(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(OdtError::InvalidInput(format!(
            "Bessel functions of the second kind need x > 0, got {x}"
        )))
    }
}

pub fn bessel_j0y0j1y1(x: f64) -> Result<BesselJY01> {
    check_positive(x)?;
    Ok(if x <= SERIES_LIMIT {
        series(x)
    } else {
        let (j0, y0) = asymptotic(0.0, x);
        let (j1, y1) = asymptotic(1.0, x);
        BesselJY01 { j0, y0, j1, y1 }
    })
}

fn series(x: f64) -> BesselJY01 {
    let q = 0.25 * x * x;
    let log_term = (0.5 * x).ln() + EULER_GAMMA;

    // term_k = (−q)^k / (k!)²  for J0; J1 uses (x/2)(−q)^k / (k!(k+1)!)
    let mut t0 = 1.0;
    let mut t1 = 0.5 * x;
    let mut j0 = t0;
    let mut j1 = t1;
    let mut harmonic = 0.0; // H_k
    let mut y0_sum = 0.0;
    // ψ(k+1) + ψ(k+2) + 2γ = H_k + H_{k+1}
    let mut y1_sum = t1 * (0.0 + 1.0);
    for k in 1..60 {
        let kf = k as f64;
        t0 *= -q / (kf * kf);
        t1 *= -q / (kf * (kf + 1.0));
        harmonic += 1.0 / kf;
        j0 += t0;
        j1 += t1;
        y0_sum += harmonic * t0;
        y1_sum += t1 * (2.0 * harmonic + 1.0 / (kf + 1.0));
        if t0.abs() < 1e-18 && t1.abs() < 1e-18 {
            break;
        }
    }
    let y0 = FRAC_2_PI * (log_term * j0 - y0_sum);
    // Y1 = −2/(πx) + (2/π) ln(x/2) J1 − (1/π) Σ (ψ(k+1)+ψ(k+2)) t1_k
    //    = −2/(πx) + (2/π)(ln(x/2)+γ) J1 − (1/π) Σ (H_k + H_{k+1}) t1_k
    let y1 = -FRAC_2_PI / x + FRAC_2_PI * log_term * j1 - y1_sum / PI;
    BesselJY01 { j0, y0, j1, y1 }
}

/// Hankel asymptotic expansion for order `nu` ∈ {0, 1}; returns `(J, Y)`.
fn asymptotic(nu: f64, x: f64) -> (f64, f64) {
    let mu = 4.0 * nu * nu;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0_f64;
    for j in 1..64 {
        let jf = j as f64;
        let odd = 2.0 * jf - 1.0;
        let next = term * (mu - odd * odd) / (8.0 * jf * x);
        if next.abs() >= term.abs() || next == 0.0 {
            break;
        }
        term = next;
        // j odd → Q with sign (−1)^((j−1)/2); j even → P with sign (−1)^(j/2)
        match j % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
        if term.abs() < 1e-17 {
            break;
        }
    }
    let chi = x - (0.5 * nu + 0.25) * PI;
    let amp = (FRAC_2_PI / x).sqrt();
    let (s, c) = chi.sin_cos();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

/// `H0^(1)(x) = J0(x) + i Y0(x)`.
pub fn hankel0(x: f64) -> Result<Complex64> {
    let b = bessel_j0y0j1y1(x)?;
    Ok(Complex64::new(b.j0, b.y0))
}

/// `H1^(1)(x) = J1(x) + i Y1(x)`.
pub fn hankel1(x: f64) -> Result<Complex64> {
    let b = bessel_j0y0j1y1(x)?;
    Ok(Complex64::new(b.j1, b.y1))
}

/// `J_0(x) … J_{max_order}(x)` for `x ≥ 0`.
pub fn bessel_j_orders(max_order: usize, x: f64) -> Result<Vec<f64>> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(OdtError::InvalidInput(format!(
            "J_m needs a finite x >= 0, got {x}"
        )));
    }
    let mut out = vec![0.0; max_order + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return Ok(out);
    }
    let top = max_order.max(x.ceil() as usize);
    let start = top + 20 + (40.0 * top as f64).sqrt() as usize;
    // need at least J1 for the normalization
    let keep = max_order.max(1);
    let mut saved = vec![0.0; keep + 1];
    let mut j_next = 0.0_f64; // j_{k+1}
    let mut j_cur = 1e-30_f64; // j_k
    for k in (1..=start).rev() {
        if k <= keep {
            saved[k] = j_cur;
        }
        let j_prev = (2.0 * k as f64 / x) * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        if j_cur.abs() > 1e250 {
            j_cur *= 1e-250;
            j_next *= 1e-250;
            for s in saved.iter_mut() {
                *s *= 1e-250;
            }
        }
    }
    saved[0] = j_cur;
    let scale = if x < 1e-300 {
        1.0 / saved[0]
    } else {
        let b = bessel_j0y0j1y1(x)?;
        FRAC_2_PI / x / (saved[1] * b.y0 - saved[0] * b.y1)
    };
    for (o, s) in out.iter_mut().zip(&saved) {
        *o = s * scale;
    }
    Ok(out)
}

/// `Y_0(x) … Y_{max_order}(x)` for `x > 0`; large orders at small `x` overflow to −∞.
pub fn bessel_y_orders(max_order: usize, x: f64) -> Result<Vec<f64>> {
    let b = bessel_j0y0j1y1(x)?;
    let mut out = Vec::with_capacity(max_order + 1);
    out.push(b.y0);
    if max_order >= 1 {
        out.push(b.y1);
    }
    for k in 1..max_order {
        let next = (2.0 * k as f64 / x) * out[k] - out[k - 1];
        out.push(next);
    }
    Ok(out)
}

/// Derivatives `C_m'` from a table of `C_0 … C_{M+1}` via `(C_{m−1} − C_{m+1}) / 2`.
pub fn derivative_from_orders(table: &[f64]) -> Vec<f64> {
    let m = table.len() - 1;
    (0..m)
        .map(|k| {
            if k == 0 {
                -table[1]
            } else {
                0.5 * (table[k - 1] - table[k + 1])
            }
        })
        .collect()
}
