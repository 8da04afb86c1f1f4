//! Sampling lattice, physical constants and the real/complex images that live on it.
//!
//! All lengths are in wavelength units (λ = 1). Samples are stored row-major,
//! row 0 at the bottom of the region, and each sample sits at the centre of its
//! pixel.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{OdtError, Result};

/// Square lattice over the region of interest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    n_side: usize,
    side_len: f64,
}

impl Grid2D {
    pub fn new(n_side: usize, side_len: f64) -> Result<Self> {
        if n_side < 2 {
            return Err(OdtError::InvalidInput(format!(
                "grid needs at least 2 samples per side, got {n_side}"
            )));
        }
        if !(side_len.is_finite() && side_len > 0.0) {
            return Err(OdtError::InvalidInput(format!(
                "side length must be positive, got {side_len}"
            )));
        }
        Ok(Self { n_side, side_len })
    }

    #[inline]
    pub fn n_side(&self) -> usize {
        self.n_side
    }

    #[inline]
    pub fn side_len(&self) -> f64 {
        self.side_len
    }

    #[inline]
    pub fn pixel(&self) -> f64 {
        self.side_len / self.n_side as f64
    }

    #[inline]
    pub fn pixel_area(&self) -> f64 {
        let h = self.pixel();
        h * h
    }

    /// Total number of samples.
    #[inline]
    pub fn len(&self) -> usize {
        self.n_side * self.n_side
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n_side + col
    }

    /// Physical coordinate of a 1-D sample index along either axis.
    #[inline]
    pub fn axis_coord(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.pixel() - 0.5 * self.side_len
    }

    /// Physical `(x, y)` of sample `(row, col)`; `x` runs along columns.
    #[inline]
    pub fn coord(&self, row: usize, col: usize) -> [f64; 2] {
        [self.axis_coord(col), self.axis_coord(row)]
    }

    /// Coordinates of every sample in storage order.
    pub fn coords(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.n_side).flat_map(move |r| (0..self.n_side).map(move |c| self.coord(r, c)))
    }

    pub(crate) fn check_len(&self, found: usize) -> Result<()> {
        if found == self.len() {
            Ok(())
        } else {
            Err(OdtError::GridMismatch {
                expected: self.n_side,
                found,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams {
    wavelength: f64,
    n_b: f64,
}

impl PhysicsParams {
    pub fn new(wavelength: f64, n_b: f64) -> Result<Self> {
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(OdtError::InvalidInput(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        if !(n_b.is_finite() && n_b >= 1.0) {
            return Err(OdtError::InvalidInput(format!(
                "background index must be >= 1, got {n_b}"
            )));
        }
        Ok(Self { wavelength, n_b })
    }

    /// λ = 1 with the given background index.
    pub fn normalized(n_b: f64) -> Result<Self> {
        Self::new(1.0, n_b)
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn n_b(&self) -> f64 {
        self.n_b
    }

    /// Free-space wavenumber 2π/λ.
    pub fn k0(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Wavenumber in the background medium.
    pub fn k_bg(&self) -> f64 {
        self.k0() * self.n_b
    }
}

impl Default for PhysicsParams {
    /// Water at λ = 1.
    fn default() -> Self {
        Self {
            wavelength: 1.0,
            n_b: 1.333,
        }
    }
}

fn check_finite_real(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(OdtError::NonFinite(what.to_string()))
    }
}

/// Real scattering potential `f = k0² (n² − n_b²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringPotential {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScatteringPotential {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        check_finite_real(&values, "scattering potential")?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Complex field sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid2D,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Grid2D, values: Vec<Complex64>) -> Result<Self> {
        grid.check_len(values.len())?;
        if !values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(OdtError::NonFinite("complex field".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.values)
    }
}

/// Refractive index per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RefractiveMap {
    grid: Grid2D,
    values: Vec<f64>,
}

impl RefractiveMap {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        check_finite_real(&values, "refractive map")?;
        if let Some(v) = values.iter().find(|&&v| v < 1.0) {
            return Err(OdtError::InvalidInput(format!(
                "refractive index below 1: {v}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn uniform(grid: Grid2D, n: f64) -> Result<Self> {
        Self::new(grid, vec![n; grid.len()])
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn potential_from_ri(n: &RefractiveMap, phys: &PhysicsParams) -> ScatteringPotential {
    let k0sq = phys.k0() * phys.k0();
    let nb2 = phys.n_b() * phys.n_b();
    let values = n.values.iter().map(|&ni| k0sq * (ni * ni - nb2)).collect();
    ScatteringPotential {
        grid: n.grid,
        values,
    }
}

/// Inverse of [`potential_from_ri`]: `n = sqrt(f/k0² + n_b²)`.
///
/// Potentials below `−k0² (n_b² − 1)` would map to an index under 1; they are
/// clamped to `n = 1`.
pub fn ri_from_potential(f: &ScatteringPotential, phys: &PhysicsParams) -> RefractiveMap {
    let k0sq = phys.k0() * phys.k0();
    let nb2 = phys.n_b() * phys.n_b();
    let values = f
        .values
        .iter()
        .map(|&fi| (fi / k0sq + nb2).max(1.0).sqrt())
        .collect();
    RefractiveMap {
        grid: f.grid,
        values,
    }
}

/// `max|f| / (k0² n_b²)`.
pub fn contrast(f: &ScatteringPotential, phys: &PhysicsParams) -> f64 {
    let fmax = f.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    fmax / (phys.k0() * phys.k0() * phys.n_b() * phys.n_b())
}

/// Reconstruction quality in dB, `20 log10(‖truth‖ / ‖estimate − truth‖)`.
///
/// Returns `f64::INFINITY` for a perfect estimate.
pub fn snr_db(estimate: &ScatteringPotential, truth: &ScatteringPotential) -> Result<f64> {
    snr_db_slices(estimate.values(), truth.values())
}

pub fn snr_db_slices(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(OdtError::DimensionMismatch {
            context: "snr_db",
            expected: truth.len(),
            found: estimate.len(),
        });
    }
    let truth_norm = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if truth_norm == 0.0 {
        return Err(OdtError::InvalidInput("SNR undefined for a zero reference".into()));
    }
    let err = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (truth_norm / err).log10())
}
