//! Analytic total field of a homogeneous circular cylinder under plane-wave
//! illumination (scalar TM case: `u` and `∂u/∂r` continuous on the rim).
//!
//! With `θ'` measured from the incidence direction and `ε_0 = 1, ε_m = 2`:
//!
//! ```text
//! r > R:  u = u_in + Σ_m ε_m i^m b_m H_m^(1)(k_b r) cos(mθ')
//! r < R:  u = u_in + Σ_m ε_m i^m (a_m J_m(k_in r) − J_m(k_b r)) cos(mθ')
//! ```
//!
//! The interior is written as a correction to the plane wave so that a bead
//! matching the background reproduces `u_in` exactly.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bessel::{bessel_j_orders, bessel_y_orders, derivative_from_orders};
use crate::error::{OdtError, Result};
use crate::forward::PlaneWave;
use crate::grid::{ComplexField, Grid2D, PhysicsParams};

const RESIDUAL_TOL: f64 = 1e-8;
const EXTRA_ORDERS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeadSpec {
    pub radius: f64,
    pub n_bead: f64,
    pub center: [f64; 2],
}

impl BeadSpec {
    pub fn new(radius: f64, n_bead: f64, center: [f64; 2]) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(OdtError::InvalidInput(format!("bead radius must be positive, got {radius}")));
        }
        if !(n_bead >= 1.0 && n_bead.is_finite()) {
            return Err(OdtError::InvalidInput(format!("bead index must be >= 1, got {n_bead}")));
        }
        Ok(Self {
            radius,
            n_bead,
            center,
        })
    }

    /// Centred bead whose contrast `(n² − n_b²)/n_b²` equals `contrast`.
    pub fn with_contrast(radius: f64, contrast: f64, phys: &PhysicsParams) -> Result<Self> {
        let nb = phys.n_b();
        Self::new(radius, (nb * nb * (1.0 + contrast)).sqrt(), [0.0, 0.0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MieSolution {
    pub field: ComplexField,
    pub truncation_order: usize,
    /// Largest of the rim continuity mismatch and the last retained term, relative to max|u|.
    pub coeff_residual: f64,
}

/// Series coefficients for one bead and wavelength.
#[derive(Debug, Clone)]
struct MieCoefficients {
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    k_bg: f64,
    k_in: f64,
}

impl MieCoefficients {
    fn new(bead: &BeadSpec, phys: &PhysicsParams, order: usize) -> Result<Self> {
        let k0 = phys.k_bg();
        let k1 = phys.k0() * bead.n_bead;
        let r = bead.radius;
        let jb = bessel_j_orders(order + 1, k0 * r)?;
        let yb = bessel_y_orders(order + 1, k0 * r)?;
        let ji = bessel_j_orders(order + 1, k1 * r)?;
        let djb = derivative_from_orders(&jb);
        let dyb = derivative_from_orders(&yb);
        let dji = derivative_from_orders(&ji);
        let mut a = Vec::with_capacity(order + 1);
        let mut b = Vec::with_capacity(order + 1);
        for m in 0..=order {
            let h = Complex64::new(jb[m], yb[m]);
            let dh = Complex64::new(djb[m], dyb[m]);
            // [ J_m(k1R)      −H_m(k0R)    ] [a]   [ J_m(k0R)     ]
            // [ k1 J_m'(k1R)  −k0 H_m'(k0R)] [b] = [ k0 J_m'(k0R) ]
            let det = ji[m] * (-k0 * dh) + h * (k1 * dji[m]);
            let num_a = jb[m] * (-k0 * dh) + h * (k0 * djb[m]);
            let num_b = ji[m] * (k0 * djb[m]) - k1 * dji[m] * jb[m];
            a.push(num_a / det);
            b.push(num_b / det);
        }
        if !a.iter().chain(&b).all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(OdtError::NonFinite("Mie coefficients".into()));
        }
        Ok(Self { a, b, k_bg: k0, k_in: k1 })
    }

    fn order(&self) -> usize {
        self.a.len() - 1
    }

    /// Scattered (outside) or correction (inside) series at local polar
    /// coordinates, without the plane-wave phase factor at the centre.
    fn series(&self, r: f64, cos_terms: &[f64], radius: f64) -> Result<Complex64> {
        let m_max = self.order();
        let mut acc = Complex64::new(0.0, 0.0);
        if r >= radius {
            let j = bessel_j_orders(m_max, self.k_bg * r)?;
            let y = bessel_y_orders(m_max, self.k_bg * r)?;
            for m in 0..=m_max {
                let h = Complex64::new(j[m], y[m]);
                acc += weight(m) * self.b[m] * h * cos_terms[m];
            }
        } else {
            let jin = bessel_j_orders(m_max, self.k_in * r)?;
            let jb = bessel_j_orders(m_max, self.k_bg * r)?;
            for m in 0..=m_max {
                acc += weight(m) * (self.a[m] * jin[m] - jb[m]) * cos_terms[m];
            }
        }
        Ok(acc)
    }

    /// Continuity mismatch and last-term size on the rim.
    fn rim_residual(&self, radius: f64, probes: usize) -> Result<f64> {
        let m_max = self.order();
        let jb = bessel_j_orders(m_max, self.k_bg * radius)?;
        let yb = bessel_y_orders(m_max, self.k_bg * radius)?;
        let ji = bessel_j_orders(m_max, self.k_in * radius)?;
        let mut worst = 0.0_f64;
        let mut peak = 1.0_f64;
        for p in 0..probes {
            let theta = 2.0 * std::f64::consts::PI * p as f64 / probes as f64;
            let mut outside = Complex64::new(0.0, 0.0);
            let mut inside = Complex64::new(0.0, 0.0);
            for m in 0..=m_max {
                let c = (m as f64 * theta).cos();
                outside += weight(m) * self.b[m] * Complex64::new(jb[m], yb[m]) * c;
                inside += weight(m) * (self.a[m] * ji[m] - jb[m]) * c;
            }
            worst = worst.max((outside - inside).norm());
            peak = peak.max(1.0 + outside.norm());
        }
        let tail = (self.b[m_max] * Complex64::new(jb[m_max], yb[m_max]))
            .norm()
            .max((self.a[m_max] * ji[m_max]).norm());
        Ok(worst.max(2.0 * tail) / peak)
    }
}

/// `ε_m i^m`
fn weight(m: usize) -> Complex64 {
    let eps = if m == 0 { 1.0 } else { 2.0 };
    let i_pow = match m % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    };
    eps * i_pow
}

fn converged_coefficients(bead: &BeadSpec, phys: &PhysicsParams) -> Result<(MieCoefficients, f64)> {
    let mut order = (phys.k_bg() * bead.radius).ceil() as usize + EXTRA_ORDERS;
    let mut last = f64::INFINITY;
    for _ in 0..=3 {
        let coeffs = MieCoefficients::new(bead, phys, order)?;
        let residual = coeffs.rim_residual(bead.radius, 64)?;
        if residual <= RESIDUAL_TOL {
            return Ok((coeffs, residual));
        }
        last = residual;
        order *= 2;
    }
    Err(OdtError::NotConverged {
        solver: "Mie series",
        iterations: order / 2,
        residual: last,
    })
}

fn local_polar(bead: &BeadSpec, wave: &PlaneWave, p: [f64; 2]) -> (f64, f64) {
    let dx = p[0] - bead.center[0];
    let dy = p[1] - bead.center[1];
    let d = wave.direction();
    let theta_inc = d[1].atan2(d[0]);
    ((dx * dx + dy * dy).sqrt(), dy.atan2(dx) - theta_inc)
}

fn cos_table(order: usize, theta: f64) -> Vec<f64> {
    (0..=order).map(|m| (m as f64 * theta).cos()).collect()
}

/// Total field on every grid sample.
pub fn mie_total_field(
    bead: &BeadSpec,
    phys: &PhysicsParams,
    grid: &Grid2D,
    wave: &PlaneWave,
) -> Result<MieSolution> {
    let half = 0.5 * grid.side_len();
    if bead.center[0].abs() + bead.radius > half || bead.center[1].abs() + bead.radius > half {
        return Err(OdtError::InvalidInput("bead does not fit inside the grid".into()));
    }
    let (coeffs, residual) = converged_coefficients(bead, phys)?;
    let centre_phase = wave.eval(phys, bead.center);
    let points: Vec<[f64; 2]> = grid.coords().collect();
    let values: Vec<Complex64> = points
        .par_iter()
        .map(|&p| -> Result<Complex64> {
            let (r, theta) = local_polar(bead, wave, p);
            let s = coeffs.series(r, &cos_table(coeffs.order(), theta), bead.radius)?;
            Ok(wave.eval(phys, p) + centre_phase * s)
        })
        .collect::<Result<_>>()?;
    Ok(MieSolution {
        field: ComplexField::new(*grid, values)?,
        truncation_order: coeffs.order(),
        coeff_residual: residual,
    })
}

/// Exterior scattered field at arbitrary points outside the bead.
pub fn mie_scattered_at(
    points: &[[f64; 2]],
    bead: &BeadSpec,
    phys: &PhysicsParams,
    wave: &PlaneWave,
) -> Result<Vec<Complex64>> {
    let (coeffs, _) = converged_coefficients(bead, phys)?;
    let centre_phase = wave.eval(phys, bead.center);
    points
        .iter()
        .map(|&p| {
            let (r, theta) = local_polar(bead, wave, p);
            if r < bead.radius {
                return Err(OdtError::InvalidInput(format!(
                    "point ({}, {}) lies inside the bead",
                    p[0], p[1]
                )));
            }
            Ok(centre_phase * coeffs.series(r, &cos_table(coeffs.order(), theta), bead.radius)?)
        })
        .collect()
}
