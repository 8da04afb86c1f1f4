//! Phantoms, multi-angle data simulation and measurement downsampling.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{OdtError, Result};
use crate::forward::{measure, solve_forward_cg, PlaneWave, SolverBudget};
use crate::gradient::IlluminationRecord;
use crate::greens::{DetectorGeometry, DetectorOperator, GreenKernel};
use crate::grid::{potential_from_ri, Grid2D, PhysicsParams, RefractiveMap, ScatteringPotential};
use crate::mie::BeadSpec;

/// Shepp-Logan ellipses: centre, semi-axes (unit head), rotation in degrees, index label.
const SHEPP_LOGAN: [([f64; 2], [f64; 2], f64, f64); 10] = [
    ([0.0, 0.0], [0.69, 0.92], 0.0, 1.457),
    ([0.0, -0.0184], [0.6624, 0.874], 0.0, 1.39),
    ([0.22, 0.0], [0.11, 0.31], -18.0, 1.333),
    ([-0.22, 0.0], [0.16, 0.41], 18.0, 1.333),
    ([0.0, 0.35], [0.21, 0.25], 0.0, 1.407),
    ([0.0, 0.1], [0.046, 0.046], 0.0, 1.437),
    ([0.0, -0.1], [0.046, 0.046], 0.0, 1.407),
    ([-0.08, -0.605], [0.046, 0.023], 0.0, 1.407),
    ([0.0, -0.606], [0.023, 0.023], 0.0, 1.407),
    ([0.06, -0.605], [0.023, 0.046], 0.0, 1.407),
];

/// Contrast at which the ellipse labels are reproduced exactly.
pub const SHEPP_LOGAN_NOMINAL_CONTRAST: f64 = 0.2;

/// Fraction of the half-side covered by the unit head.
const HEAD_SCALE: f64 = 0.9;

/// 10-ellipse Shepp-Logan head. Each pixel takes the label of the last ellipse
/// containing its centre; `n² − n_b²` is scaled by `contrast / 0.2`.
pub fn shepp_logan(grid: &Grid2D, contrast: f64, phys: &PhysicsParams) -> Result<RefractiveMap> {
    if !(contrast >= 0.0 && contrast.is_finite()) {
        return Err(OdtError::InvalidInput(format!(
            "phantom contrast must be >= 0, got {contrast}"
        )));
    }
    let nb2 = phys.n_b() * phys.n_b();
    let scale = contrast / SHEPP_LOGAN_NOMINAL_CONTRAST;
    let radius = HEAD_SCALE * grid.side_len() / 2.0;
    let values = grid
        .coords()
        .map(|[x, y]| {
            let (u, v) = (x / radius, y / radius);
            let label = SHEPP_LOGAN
                .iter()
                .rev()
                .find(|(c, ax, deg, _)| {
                    let (s, co) = deg.to_radians().sin_cos();
                    let (dx, dy) = (u - c[0], v - c[1]);
                    let xr = dx * co + dy * s;
                    let yr = -dx * s + dy * co;
                    (xr / ax[0]).powi(2) + (yr / ax[1]).powi(2) <= 1.0
                })
                .map(|e| e.3);
            match label {
                Some(n) => (nb2 + scale * (n * n - nb2)).max(1.0).sqrt(),
                None => phys.n_b(),
            }
        })
        .collect();
    RefractiveMap::new(*grid, values)
}

/// Disc of index `n_bead`, membership by pixel centre.
pub fn bead_phantom(grid: &Grid2D, bead: &BeadSpec, phys: &PhysicsParams) -> Result<RefractiveMap> {
    let half = grid.side_len() / 2.0;
    let [cx, cy] = bead.center;
    if cx.abs() + bead.radius > half || cy.abs() + bead.radius > half {
        return Err(OdtError::InvalidInput("bead does not fit inside the grid".into()));
    }
    let values = grid
        .coords()
        .map(|[x, y]| {
            if (x - cx).hypot(y - cy) <= bead.radius {
                bead.n_bead
            } else {
                phys.n_b()
            }
        })
        .collect();
    RefractiveMap::new(*grid, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectorSides {
    pub bottom: bool,
    pub top: bool,
}

impl DetectorSides {
    pub const BOTH: Self = Self {
        bottom: true,
        top: true,
    };

    fn rows(&self, grid: &Grid2D) -> Vec<usize> {
        let mut rows = Vec::new();
        if self.bottom {
            rows.push(0);
        }
        if self.top {
            rows.push(grid.n_side() - 1);
        }
        rows
    }
}

/// `count` angles uniformly spaced over `[lo, hi]` (radians).
pub fn uniform_angles(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimProtocol {
    /// Incidence angles in radians.
    pub angles: Vec<f64>,
    pub fine_grid: Grid2D,
    /// Distance of the source line below the grid centre.
    pub source_distance: f64,
    pub detector_sides: DetectorSides,
    /// Samples kept per detector side after block averaging.
    pub downsample_to: usize,
}

impl Default for SimProtocol {
    fn default() -> Self {
        Self {
            angles: uniform_angles(31, -60f64.to_radians(), 60f64.to_radians()),
            fine_grid: Grid2D::new(528, 33.0).expect("valid default grid"),
            source_distance: 16.5,
            detector_sides: DetectorSides::BOTH,
            downsample_to: 132,
        }
    }
}

impl SimProtocol {
    /// Samples per side before averaging (one per fine-grid column).
    pub fn detector_samples(&self) -> usize {
        self.fine_grid.n_side()
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles.is_empty() {
            return Err(OdtError::InvalidInput("no incidence angles".into()));
        }
        if let Some(a) = self
            .angles
            .iter()
            .find(|a| !(a.abs() < std::f64::consts::FRAC_PI_2))
        {
            return Err(OdtError::InvalidInput(format!("angle {a} outside (−π/2, π/2)")));
        }
        if !(self.detector_sides.top || self.detector_sides.bottom) {
            return Err(OdtError::InvalidInput("no detector side selected".into()));
        }
        let m = self.detector_samples();
        if self.downsample_to == 0 || !m.is_multiple_of(self.downsample_to) {
            return Err(OdtError::InvalidInput(format!(
                "downsample_to = {} does not divide {m} detector samples",
                self.downsample_to
            )));
        }
        if !self.source_distance.is_finite() {
            return Err(OdtError::NonFinite("source distance".into()));
        }
        Ok(())
    }
}

/// Mean of each run of `factor` consecutive samples.
pub fn block_average(values: &[Complex64], factor: usize) -> Result<Vec<Complex64>> {
    check_factor(values.len(), factor)?;
    Ok(values
        .chunks_exact(factor)
        .map(|c| c.iter().sum::<Complex64>() / factor as f64)
        .collect())
}

fn block_average_points(points: &[[f64; 2]], factor: usize) -> Result<Vec<[f64; 2]>> {
    check_factor(points.len(), factor)?;
    Ok(points
        .chunks_exact(factor)
        .map(|c| {
            let s = c.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
            [s[0] / factor as f64, s[1] / factor as f64]
        })
        .collect())
}

fn check_factor(len: usize, factor: usize) -> Result<()> {
    if factor == 0 || !len.is_multiple_of(factor) {
        return Err(OdtError::InvalidInput(format!(
            "block size {factor} does not divide {len} samples"
        )));
    }
    Ok(())
}

/// Detector records for every illumination, with the geometry they were taken on.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub angles: Vec<f64>,
    pub source_distance: f64,
    pub positions: Vec<[f64; 2]>,
    /// Total field `y_p` per angle.
    pub y: Vec<Vec<Complex64>>,
    pub u_in_on_gamma: Vec<Vec<Complex64>>,
    pub converged: Vec<bool>,
    pub metadata: BTreeMap<String, String>,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn detector_count(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.angles.len();
        let m = self.positions.len();
        for (what, n) in [
            ("measurement records", self.y.len()),
            ("incident records", self.u_in_on_gamma.len()),
            ("convergence flags", self.converged.len()),
        ] {
            if n != p {
                return Err(OdtError::Format(format!("{what}: expected {p}, found {n}")));
            }
        }
        for (y, u) in self.y.iter().zip(&self.u_in_on_gamma) {
            if y.len() != m || u.len() != m {
                return Err(OdtError::Format(format!(
                    "record length {} / {} does not match {m} detectors",
                    y.len(),
                    u.len()
                )));
            }
        }
        Ok(())
    }

    /// `y_p − u_in|Γ`.
    pub fn scattered(&self, p: usize) -> Vec<Complex64> {
        self.y[p]
            .iter()
            .zip(&self.u_in_on_gamma[p])
            .map(|(y, u)| y - u)
            .collect()
    }

    pub fn detector(&self, grid: &Grid2D, phys: &PhysicsParams) -> Result<DetectorOperator> {
        DetectorOperator::new(DetectorGeometry::new(self.positions.clone(), *grid)?, phys)
    }

    /// Incident fields on `grid` paired with the recorded scattered data.
    pub fn illuminations(&self, grid: &Grid2D, phys: &PhysicsParams) -> Result<Vec<IlluminationRecord>> {
        self.validate()?;
        (0..self.len())
            .map(|p| {
                let wave = PlaneWave::new(self.angles[p], self.source_distance)?;
                Ok(IlluminationRecord {
                    u_in: wave.on_grid(grid, phys),
                    u_in_on_gamma: self.u_in_on_gamma[p].clone(),
                    y_sc: self.scattered(p),
                    angle: self.angles[p],
                })
            })
            .collect()
    }
}

/// Solves on the fine grid, reads the total field on the selected edge rows and
/// block-averages each side down to `downsample_to` samples.
pub fn simulate(
    phantom: &RefractiveMap,
    protocol: &SimProtocol,
    phys: &PhysicsParams,
    budget: SolverBudget,
) -> Result<MeasurementSet> {
    protocol.validate()?;
    let grid = protocol.fine_grid;
    if *phantom.grid() != grid {
        return Err(OdtError::InvalidInput(format!(
            "phantom grid {:?} differs from the protocol grid {grid:?}",
            phantom.grid()
        )));
    }
    let f = potential_from_ri(phantom, phys);
    let kernel = GreenKernel::new(&grid, phys)?;
    let rows = protocol.detector_sides.rows(&grid);
    let n = grid.n_side();
    let factor = n / protocol.downsample_to;

    let mut fine_positions = Vec::with_capacity(rows.len() * n);
    for &r in &rows {
        fine_positions.extend((0..n).map(|c| grid.coord(r, c)));
    }
    let positions = side_wise(&fine_positions, rows.len(), |s| block_average_points(s, factor))?;

    let per_angle: Vec<(Vec<Complex64>, Vec<Complex64>, bool)> = protocol
        .angles
        .par_iter()
        .map(|&angle| {
            let wave = PlaneWave::new(angle, protocol.source_distance)?;
            let u_in = wave.on_grid(&grid, phys);
            let rep = solve_forward_cg(&kernel, &f, &u_in, budget)?;
            let mut y = Vec::with_capacity(fine_positions.len());
            let mut uin = Vec::with_capacity(fine_positions.len());
            for &r in &rows {
                let span = grid.index(r, 0)..grid.index(r, 0) + n;
                y.extend_from_slice(&rep.field.values()[span.clone()]);
                uin.extend_from_slice(&u_in.values()[span]);
            }
            let y = side_wise(&y, rows.len(), |s| block_average(s, factor))?;
            let uin = side_wise(&uin, rows.len(), |s| block_average(s, factor))?;
            Ok((y, uin, rep.converged))
        })
        .collect::<Result<_>>()?;

    let mut metadata = BTreeMap::new();
    metadata.insert("fine_n".into(), n.to_string());
    metadata.insert("fine_side".into(), grid.side_len().to_string());
    metadata.insert("sim_max_iters".into(), budget.max_iters.to_string());
    metadata.insert("sim_tol".into(), budget.rel_change_tol.to_string());
    metadata.insert("n_b".into(), phys.n_b().to_string());
    metadata.insert("wavelength".into(), phys.wavelength().to_string());

    let mut set = MeasurementSet {
        angles: protocol.angles.clone(),
        source_distance: protocol.source_distance,
        positions,
        y: Vec::with_capacity(per_angle.len()),
        u_in_on_gamma: Vec::with_capacity(per_angle.len()),
        converged: Vec::with_capacity(per_angle.len()),
        metadata,
    };
    for (y, u, ok) in per_angle {
        set.y.push(y);
        set.u_in_on_gamma.push(u);
        set.converged.push(ok);
    }
    Ok(set)
}

fn side_wise<T: Clone>(
    values: &[T],
    sides: usize,
    op: impl Fn(&[T]) -> Result<Vec<T>>,
) -> Result<Vec<T>> {
    let per = values.len() / sides;
    let mut out = Vec::new();
    for s in values.chunks_exact(per) {
        out.extend(op(s)?);
    }
    Ok(out)
}

/// Data generated with the same discretization used for inversion: `y_p` from
/// [`measure`] at the given detector positions.
pub fn simulate_same_grid(
    f: &ScatteringPotential,
    positions: Vec<[f64; 2]>,
    angles: &[f64],
    source_distance: f64,
    phys: &PhysicsParams,
    budget: SolverBudget,
) -> Result<MeasurementSet> {
    let grid = *f.grid();
    let kernel = GreenKernel::new(&grid, phys)?;
    let detector = DetectorOperator::new(DetectorGeometry::new(positions.clone(), grid)?, phys)?;
    let per_angle: Vec<(Vec<Complex64>, Vec<Complex64>, bool)> = angles
        .par_iter()
        .map(|&angle| {
            let wave = PlaneWave::new(angle, source_distance)?;
            let u_in = wave.on_grid(&grid, phys);
            let uin_gamma = wave.at_points(phys, &positions);
            let rep = solve_forward_cg(&kernel, f, &u_in, budget)?;
            let y = measure(&detector, f, &rep.field, &uin_gamma)?;
            Ok((y, uin_gamma, rep.converged))
        })
        .collect::<Result<_>>()?;
    let mut metadata = BTreeMap::new();
    metadata.insert("fine_n".into(), grid.n_side().to_string());
    metadata.insert("fine_side".into(), grid.side_len().to_string());
    metadata.insert("sim_max_iters".into(), budget.max_iters.to_string());
    metadata.insert("sim_tol".into(), budget.rel_change_tol.to_string());
    metadata.insert("n_b".into(), phys.n_b().to_string());
    metadata.insert("wavelength".into(), phys.wavelength().to_string());
    let (y, rest): (Vec<_>, Vec<_>) = per_angle.into_iter().map(|(y, u, ok)| (y, (u, ok))).unzip();
    let (u_in_on_gamma, converged) = rest.into_iter().unzip();
    Ok(MeasurementSet {
        angles: angles.to_vec(),
        source_distance,
        positions,
        y,
        u_in_on_gamma,
        converged,
        metadata,
    })
}

/// Extra memory of storing every forward iterate: `N · K · threads · 16` bytes.
pub fn predict_memory_delta(n_pixels: u64, k_iters: u64, n_threads: u64) -> Result<u64> {
    if n_pixels == 0 || k_iters == 0 || n_threads == 0 {
        return Err(OdtError::InvalidInput(
            "memory model inputs must all be >= 1".into(),
        ));
    }
    n_pixels
        .checked_mul(k_iters)
        .and_then(|v| v.checked_mul(n_threads))
        .and_then(|v| v.checked_mul(16))
        .ok_or_else(|| OdtError::InvalidInput("memory estimate overflows u64".into()))
}

/// Decimal (SI) rendering with one decimal place above 1 kB, e.g. `31.5 MB`.
pub fn format_bytes(bytes: u64) -> String {
    const UNITS: [&str; 6] = ["kB", "MB", "GB", "TB", "PB", "EB"];
    if bytes < 1000 {
        return format!("{bytes} B");
    }
    let mut v = bytes as f64;
    let mut unit = "B";
    for u in UNITS {
        if v < 1000.0 {
            break;
        }
        v /= 1000.0;
        unit = u;
    }
    format!("{v:.1} {unit}")
}
