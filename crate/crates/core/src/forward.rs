//! Nonlinear forward model: the discrete Lippmann-Schwinger operator
//! `A(f) = I − G diag(f)`, the least-squares solve for the total field, and the
//! detector measurement `y = G̃ diag(f) u + u_in|Γ`.

use num_complex::Complex64;
use std::f64::consts::FRAC_PI_2;
use std::ops::ControlFlow;

use crate::error::{OdtError, Result};
use crate::fft::Scratch;
use crate::greens::{DetectorOperator, GreenKernel};
use crate::grid::{ComplexField, Grid2D, PhysicsParams, ScatteringPotential};
use crate::linalg;
pub use crate::linop::SolverBudget;
use crate::linop::{cgls, nagd, LinearOperator, SolveStats};

/// `A(f) = I − G diag(f)` as a matrix-free operator.
pub struct LsOperator<'a> {
    kernel: &'a GreenKernel,
    f: &'a [f64],
}

impl<'a> LsOperator<'a> {
    pub fn new(kernel: &'a GreenKernel, f: &'a ScatteringPotential) -> Result<Self> {
        check_grid(kernel.grid(), f.grid())?;
        Ok(Self {
            kernel,
            f: f.values(),
        })
    }

    pub(crate) fn from_slice(kernel: &'a GreenKernel, f: &'a [f64]) -> Self {
        debug_assert_eq!(f.len(), kernel.grid().len());
        Self { kernel, f }
    }
}

impl LinearOperator for LsOperator<'_> {
    fn dim(&self) -> usize {
        self.f.len()
    }

    fn apply(&self, x: &[Complex64], out: &mut [Complex64], scratch: &mut Scratch) {
        let fx: Vec<Complex64> = x.iter().zip(self.f).map(|(xi, fi)| xi * fi).collect();
        self.kernel.convolve(&fx, out, scratch);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi - *o;
        }
    }

    // A^H = I − diag(f) G^H since f is real
    fn apply_adjoint(&self, x: &[Complex64], out: &mut [Complex64], scratch: &mut Scratch) {
        self.kernel.convolve_adjoint(x, out, scratch);
        for ((o, xi), fi) in out.iter_mut().zip(x).zip(self.f) {
            *o = xi - *o * fi;
        }
    }
}

pub(crate) fn check_grid(expected: &Grid2D, found: &Grid2D) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(OdtError::GridMismatch {
            expected: expected.n_side(),
            found: found.len(),
        })
    }
}

/// `u − G (f ⊙ u)`.
pub fn ls_apply(
    kernel: &GreenKernel,
    f: &ScatteringPotential,
    u: &ComplexField,
) -> Result<ComplexField> {
    let op = LsOperator::new(kernel, f)?;
    check_grid(kernel.grid(), u.grid())?;
    let mut out = ComplexField::zeros(*u.grid());
    op.apply(u.values(), out.values_mut(), &mut Scratch::default());
    Ok(out)
}

/// `u − f ⊙ (G^H u)`.
pub fn ls_apply_adjoint(
    kernel: &GreenKernel,
    f: &ScatteringPotential,
    u: &ComplexField,
) -> Result<ComplexField> {
    let op = LsOperator::new(kernel, f)?;
    check_grid(kernel.grid(), u.grid())?;
    let mut out = ComplexField::zeros(*u.grid());
    op.apply_adjoint(u.values(), out.values_mut(), &mut Scratch::default());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSolveReport {
    pub field: ComplexField,
    pub iterations: usize,
    pub final_step_change: f64,
    /// `‖A(f) u − u_in‖₂` at the returned field.
    pub residual_norm: f64,
    pub converged: bool,
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardSolver {
    Cg,
    Nagd,
}

impl std::str::FromStr for ForwardSolver {
    type Err = OdtError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cg" => Ok(Self::Cg),
            "nagd" => Ok(Self::Nagd),
            other => Err(OdtError::InvalidInput(format!("unknown solver '{other}'"))),
        }
    }
}

impl std::fmt::Display for ForwardSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cg => "cg",
            Self::Nagd => "nagd",
        })
    }
}

/// Total field `u_p(f)` from `u⁰ = u_in`; `observe(k, u_k)` sees every iterate
/// and may end the solve early.
pub fn solve_forward_observed<F>(
    solver: ForwardSolver,
    kernel: &GreenKernel,
    f: &ScatteringPotential,
    u_in: &ComplexField,
    budget: SolverBudget,
    observe: F,
) -> Result<ForwardSolveReport>
where
    F: FnMut(usize, &[Complex64]) -> ControlFlow<()>,
{
    let op = LsOperator::new(kernel, f)?;
    check_grid(kernel.grid(), u_in.grid())?;
    let mut u = u_in.values().to_vec();
    let stats = match solver {
        ForwardSolver::Cg => cgls(&op, u_in.values(), &mut u, budget, observe)?,
        ForwardSolver::Nagd => nagd(&op, u_in.values(), &mut u, budget, observe)?,
    };
    finish(&op, u_in, u, stats)
}

fn finish(
    op: &LsOperator<'_>,
    u_in: &ComplexField,
    u: Vec<Complex64>,
    stats: SolveStats,
) -> Result<ForwardSolveReport> {
    let mut au = vec![Complex64::new(0.0, 0.0); u.len()];
    op.apply(&u, &mut au, &mut Scratch::default());
    let residual_norm = linalg::diff_norm(&au, u_in.values());
    Ok(ForwardSolveReport {
        field: ComplexField::new(*u_in.grid(), u)?,
        iterations: stats.iterations,
        final_step_change: stats.final_step_change,
        residual_norm,
        converged: stats.converged,
        residual_history: stats.residual_history,
    })
}

pub fn solve_forward_cg(
    kernel: &GreenKernel,
    f: &ScatteringPotential,
    u_in: &ComplexField,
    budget: SolverBudget,
) -> Result<ForwardSolveReport> {
    solve_forward_observed(ForwardSolver::Cg, kernel, f, u_in, budget, |_, _| ControlFlow::Continue(()))
}

pub fn solve_forward_nagd(
    kernel: &GreenKernel,
    f: &ScatteringPotential,
    u_in: &ComplexField,
    budget: SolverBudget,
) -> Result<ForwardSolveReport> {
    solve_forward_observed(ForwardSolver::Nagd, kernel, f, u_in, budget, |_, _| ControlFlow::Continue(()))
}

/// `G̃ (f ⊙ u) + u_in|Γ`.
pub fn measure(
    detector: &DetectorOperator,
    f: &ScatteringPotential,
    u: &ComplexField,
    u_in_on_gamma: &[Complex64],
) -> Result<Vec<Complex64>> {
    let grid = detector.geometry().grid();
    check_grid(grid, f.grid())?;
    check_grid(grid, u.grid())?;
    if u_in_on_gamma.len() != detector.rows() {
        return Err(OdtError::DimensionMismatch {
            context: "measure",
            expected: detector.rows(),
            found: u_in_on_gamma.len(),
        });
    }
    let fu: Vec<Complex64> = u.values().iter().zip(f.values()).map(|(a, b)| a * b).collect();
    let mut y = detector.apply(&fu)?;
    for (yi, ui) in y.iter_mut().zip(u_in_on_gamma) {
        *yi += ui;
    }
    Ok(y)
}

/// `‖u − u_ref‖² / ‖u_ref‖²`.
pub fn relative_error(u: &[Complex64], u_ref: &[Complex64]) -> Result<f64> {
    if u.len() != u_ref.len() {
        return Err(OdtError::DimensionMismatch {
            context: "relative_error",
            expected: u_ref.len(),
            found: u.len(),
        });
    }
    let denom = linalg::norm_sqr(u_ref);
    if denom == 0.0 {
        return Err(OdtError::InvalidInput("zero reference field".into()));
    }
    Ok(linalg::diff_norm(u, u_ref).powi(2) / denom)
}

/// Unit-amplitude plane wave travelling along `(sin θ, cos θ)`, with zero phase
/// on the source line `y = −source_offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneWave {
    angle: f64,
    source_offset: f64,
}

impl PlaneWave {
    pub fn new(angle: f64, source_offset: f64) -> Result<Self> {
        if !(angle.abs() < FRAC_PI_2) {
            return Err(OdtError::InvalidInput(format!(
                "incidence angle must lie in (−π/2, π/2), got {angle}"
            )));
        }
        if !source_offset.is_finite() {
            return Err(OdtError::NonFinite("source offset".into()));
        }
        Ok(Self {
            angle,
            source_offset,
        })
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn source_offset(&self) -> f64 {
        self.source_offset
    }

    pub fn direction(&self) -> [f64; 2] {
        [self.angle.sin(), self.angle.cos()]
    }

    pub fn eval(&self, phys: &PhysicsParams, p: [f64; 2]) -> Complex64 {
        let d = self.direction();
        let phase = phys.k_bg() * (d[0] * p[0] + d[1] * (p[1] + self.source_offset));
        Complex64::from_polar(1.0, phase)
    }

    pub fn on_grid(&self, grid: &Grid2D, phys: &PhysicsParams) -> ComplexField {
        let values = grid.coords().map(|p| self.eval(phys, p)).collect();
        ComplexField::new(*grid, values).expect("unit-modulus samples")
    }

    pub fn at_points(&self, phys: &PhysicsParams, points: &[[f64; 2]]) -> Vec<Complex64> {
        points.iter().map(|&p| self.eval(phys, p)).collect()
    }
}

pub fn plane_wave(
    grid: &Grid2D,
    phys: &PhysicsParams,
    angle: f64,
    source_offset: f64,
) -> Result<ComplexField> {
    Ok(PlaneWave::new(angle, source_offset)?.on_grid(grid, phys))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn water() -> PhysicsParams {
        PhysicsParams::normalized(1.333).unwrap()
    }

    #[test]
    fn zero_potential_is_identity() {
        let grid = Grid2D::new(8, 2.0).unwrap();
        let kernel = GreenKernel::new(&grid, &water()).unwrap();
        let f = ScatteringPotential::zeros(grid);
        let u = plane_wave(&grid, &water(), 0.3, 1.0).unwrap();
        assert_eq!(ls_apply(&kernel, &f, &u).unwrap(), u);
        assert_eq!(ls_apply_adjoint(&kernel, &f, &u).unwrap(), u);

        let cg = solve_forward_cg(&kernel, &f, &u, SolverBudget::default()).unwrap();
        assert!(cg.iterations <= 1);
        assert_eq!(cg.field, u);
        let ng = solve_forward_nagd(&kernel, &f, &u, SolverBudget::default()).unwrap();
        assert!(ng.iterations <= 5 && ng.converged);
        assert!(linalg::diff_norm(ng.field.values(), u.values()) < 1e-12);
    }

    #[test]
    fn plane_wave_phase_steps() {
        let grid = Grid2D::new(8, 2.0).unwrap();
        let phys = water();
        let u = plane_wave(&grid, &phys, 0.0, 5.0).unwrap();
        let step = Complex64::from_polar(1.0, phys.k_bg() * grid.pixel());
        for r in 0..7 {
            for c in 0..8 {
                let a = u.values()[grid.index(r, c)];
                let b = u.values()[grid.index(r + 1, c)];
                assert!((a.norm() - 1.0).abs() < 1e-15);
                assert!((b - a * step).norm() < 1e-12);
                assert_eq!(a, u.values()[grid.index(r, 0)]);
            }
        }
        assert!(plane_wave(&grid, &phys, FRAC_PI_2, 0.0).is_err());
    }

    #[test]
    fn relative_error_values() {
        let r: Vec<Complex64> = (0..4).map(|i| Complex64::new(i as f64 + 1.0, -1.0)).collect();
        assert_eq!(relative_error(&r, &r).unwrap(), 0.0);
        let z = vec![Complex64::new(0.0, 0.0); 4];
        assert!((relative_error(&z, &r).unwrap() - 1.0).abs() < 1e-15);
        let s: Vec<Complex64> = r.iter().map(|v| v * 1.1).collect();
        assert!((relative_error(&s, &r).unwrap() - 0.01).abs() < 1e-12);
        assert!(relative_error(&r, &z).is_err());
    }

    #[test]
    fn measure_without_scatterer_is_incident() {
        use crate::greens::DetectorGeometry;
        let grid = Grid2D::new(4, 1.0).unwrap();
        let phys = water();
        let det = DetectorGeometry::new(DetectorGeometry::line(2.0, -1.0, 1.0, 3), grid).unwrap();
        let op = DetectorOperator::new(det, &phys).unwrap();
        let f = ScatteringPotential::zeros(grid);
        let u = plane_wave(&grid, &phys, 0.0, 0.0).unwrap();
        let uin: Vec<Complex64> = (0..3).map(|i| Complex64::new(i as f64, 1.0)).collect();
        assert_eq!(measure(&op, &f, &u, &uin).unwrap(), uin);
        assert!(measure(&op, &f, &u, &uin[..2]).is_err());
    }
}
