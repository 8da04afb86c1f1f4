//! Data-fidelity gradient through the closed-form Jacobian of
//! `h_p(f) = diag(f) u_p(f)`:
//!
//! ```text
//! J   = (I + diag(f) (I − G diag(f))⁻¹ G) diag(u_p)
//! J^H = diag(conj u_p) (I + G^H (I − diag(f) G^H)⁻¹ diag(f))
//! ```
//!
//! Both inner inverses are least-squares solves of the same size as the
//! forward problem, so no forward iterates need to be stored.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::ops::ControlFlow;

use crate::error::{OdtError, Result};
use crate::fft::Scratch;
use crate::forward::{check_grid, solve_forward_observed, ForwardSolveReport, ForwardSolver, LsOperator};
use crate::greens::{DetectorOperator, GreenKernel};
use crate::grid::{ComplexField, ScatteringPotential};
use crate::linalg;
use crate::linop::{cgls, Adjoint, SolveStats, SolverBudget};

/// One illumination as seen by the reconstruction grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationRecord {
    pub u_in: ComplexField,
    pub u_in_on_gamma: Vec<Complex64>,
    /// `y − u_in|Γ`
    pub y_sc: Vec<Complex64>,
    pub angle: f64,
}

/// Solver choices for the forward field and for the inner Jacobian solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSettings {
    pub solver: ForwardSolver,
    pub forward: SolverBudget,
    pub jacobian: SolverBudget,
}

impl Default for GradientSettings {
    fn default() -> Self {
        Self {
            solver: ForwardSolver::Cg,
            forward: SolverBudget::default(),
            jacobian: SolverBudget::default(),
        }
    }
}

/// `J v` for a real direction `v`; the inner `(I − G diag(f))⁻¹` runs CG to `budget`.
pub fn jacobian_apply(
    kernel: &GreenKernel,
    f: &ScatteringPotential,
    u_p: &ComplexField,
    v: &[f64],
    budget: SolverBudget,
) -> Result<(ComplexField, SolveStats)> {
    let grid = kernel.grid();
    check_grid(grid, f.grid())?;
    check_grid(grid, u_p.grid())?;
    check_len(v.len(), grid.len(), "jacobian direction")?;
    let uv: Vec<Complex64> = u_p.values().iter().zip(v).map(|(u, vi)| u * vi).collect();
    let mut scratch = Scratch::default();
    let mut rhs = vec![Complex64::new(0.0, 0.0); uv.len()];
    kernel.convolve(&uv, &mut rhs, &mut scratch);

    let op = LsOperator::new(kernel, f)?;
    let mut z = rhs.clone();
    let stats = cgls(&op, &rhs, &mut z, budget, |_, _| ControlFlow::Continue(()))?;
    let out: Vec<Complex64> = uv
        .iter()
        .zip(&z)
        .zip(f.values())
        .map(|((a, zi), fi)| a + zi * fi)
        .collect();
    Ok((ComplexField::new(*grid, out)?, stats))
}

/// `J^H w`, complex; the gradient keeps only its real part.
pub fn jacobian_adjoint_apply(
    kernel: &GreenKernel,
    f: &ScatteringPotential,
    u_p: &ComplexField,
    w: &ComplexField,
    budget: SolverBudget,
) -> Result<(ComplexField, SolveStats)> {
    let grid = kernel.grid();
    check_grid(grid, f.grid())?;
    check_grid(grid, u_p.grid())?;
    check_grid(grid, w.grid())?;
    let (out, stats) = jacobian_adjoint_raw(kernel, f.values(), u_p.values(), w.values(), budget)?;
    Ok((ComplexField::new(*grid, out)?, stats))
}

fn jacobian_adjoint_raw(
    kernel: &GreenKernel,
    f: &[f64],
    u_p: &[Complex64],
    w: &[Complex64],
    budget: SolverBudget,
) -> Result<(Vec<Complex64>, SolveStats)> {
    let op = LsOperator::from_slice(kernel, f);
    let rhs: Vec<Complex64> = w.iter().zip(f).map(|(wi, fi)| wi * fi).collect();
    let mut z = rhs.clone();
    // (I − diag(f) G^H) z = diag(f) w, i.e. A(f)^H z = diag(f) w
    let stats = cgls(&Adjoint(&op), &rhs, &mut z, budget, |_, _| ControlFlow::Continue(()))?;
    let mut ghz = vec![Complex64::new(0.0, 0.0); z.len()];
    kernel.convolve_adjoint(&z, &mut ghz, &mut Scratch::default());
    let out = u_p
        .iter()
        .zip(w)
        .zip(&ghz)
        .map(|((u, wi), gi)| u.conj() * (wi + gi))
        .collect();
    Ok((out, stats))
}

/// `h_p(f) = f ⊙ u_p(f)` with a fresh forward solve.
pub fn scattering_source(
    kernel: &GreenKernel,
    f: &ScatteringPotential,
    u_in: &ComplexField,
    settings: &GradientSettings,
) -> Result<Vec<Complex64>> {
    let rep = solve_forward_observed(settings.solver, kernel, f, u_in, settings.forward, |_, _| ControlFlow::Continue(()))?;
    Ok(rep
        .field
        .values()
        .iter()
        .zip(f.values())
        .map(|(u, fi)| u * fi)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialGradient {
    pub grad: Vec<f64>,
    /// `½ ‖G̃ (f ⊙ u_p) − y_sc‖²`
    pub fidelity: f64,
    pub forward: ForwardSolveReport,
    pub jacobian: SolveStats,
}

/// Gradient and value of one illumination's data term.
pub fn grad_dp(
    kernel: &GreenKernel,
    detector: &DetectorOperator,
    f: &ScatteringPotential,
    illum: &IlluminationRecord,
    settings: &GradientSettings,
) -> Result<PartialGradient> {
    check_grid(kernel.grid(), detector.geometry().grid())?;
    check_len(illum.y_sc.len(), detector.rows(), "scattered data")?;
    let forward = solve_forward_observed(
        settings.solver,
        kernel,
        f,
        &illum.u_in,
        settings.forward,
        |_, _| ControlFlow::Continue(()),
    )?;
    let fu: Vec<Complex64> = forward
        .field
        .values()
        .iter()
        .zip(f.values())
        .map(|(u, fi)| u * fi)
        .collect();
    let mut residual = detector.apply(&fu)?;
    for (r, y) in residual.iter_mut().zip(&illum.y_sc) {
        *r -= y;
    }
    let fidelity = 0.5 * linalg::norm_sqr(&residual);
    let w = detector.apply_adjoint(&residual)?;
    let (jhw, jacobian) =
        jacobian_adjoint_raw(kernel, f.values(), forward.field.values(), &w, settings.jacobian)?;
    let grad: Vec<f64> = jhw.iter().map(|z| z.re).collect();
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(OdtError::NonFinite("data-term gradient".into()));
    }
    Ok(PartialGradient {
        grad,
        fidelity,
        forward,
        jacobian,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub grad: Vec<f64>,
    pub fidelity: f64,
    pub subset: Vec<usize>,
    pub forward_reports: Vec<ForwardSolveReport>,
    pub jacobian_solve_reports: Vec<SolveStats>,
}

/// Sum of per-illumination gradients over `subset`.
///
/// Illuminations run in parallel; the reduction is always in ascending index
/// order so results do not depend on the worker count.
pub fn grad_d_subset(
    kernel: &GreenKernel,
    detector: &DetectorOperator,
    f: &ScatteringPotential,
    illums: &[IlluminationRecord],
    subset: &[usize],
    settings: &GradientSettings,
) -> Result<GradientReport> {
    if subset.is_empty() {
        return Err(OdtError::InvalidInput("empty illumination subset".into()));
    }
    let mut order = subset.to_vec();
    order.sort_unstable();
    order.dedup();
    if let Some(&bad) = order.iter().find(|&&p| p >= illums.len()) {
        return Err(OdtError::InvalidInput(format!(
            "illumination index {bad} out of range (P = {})",
            illums.len()
        )));
    }
    let parts: Vec<PartialGradient> = order
        .par_iter()
        .map(|&p| grad_dp(kernel, detector, f, &illums[p], settings))
        .collect::<Result<_>>()?;

    let mut grad = vec![0.0; kernel.grid().len()];
    let mut fidelity = 0.0;
    let mut forward_reports = Vec::with_capacity(parts.len());
    let mut jacobian_solve_reports = Vec::with_capacity(parts.len());
    for part in parts {
        for (g, d) in grad.iter_mut().zip(&part.grad) {
            *g += d;
        }
        fidelity += part.fidelity;
        forward_reports.push(part.forward);
        jacobian_solve_reports.push(part.jacobian);
    }
    Ok(GradientReport {
        grad,
        fidelity,
        subset: order,
        forward_reports,
        jacobian_solve_reports,
    })
}

/// Total data term `Σ_p D_p(f)` (forward solves only).
pub fn fidelity(
    kernel: &GreenKernel,
    detector: &DetectorOperator,
    f: &ScatteringPotential,
    illums: &[IlluminationRecord],
    settings: &GradientSettings,
) -> Result<f64> {
    let parts: Vec<f64> = illums
        .par_iter()
        .map(|illum| -> Result<f64> {
            check_len(illum.y_sc.len(), detector.rows(), "scattered data")?;
            let fu = scattering_source(kernel, f, &illum.u_in, settings)?;
            let mut r = detector.apply(&fu)?;
            for (ri, y) in r.iter_mut().zip(&illum.y_sc) {
                *ri -= y;
            }
            Ok(0.5 * linalg::norm_sqr(&r))
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

fn check_len(found: usize, expected: usize, context: &'static str) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(OdtError::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}

/// Seeded stochastic subset schedule: each epoch is a fresh permutation of
/// `0..P` cut into consecutive blocks of `size`; a short trailing block is
/// dropped so every subset has exactly `size` elements.
#[derive(Debug, Clone)]
pub struct SubsetSchedule {
    total: usize,
    size: usize,
    rng: ChaCha8Rng,
    pending: Vec<Vec<usize>>,
}

impl SubsetSchedule {
    pub fn new(total: usize, size: usize, seed: u64) -> Result<Self> {
        if size == 0 || size > total {
            return Err(OdtError::InvalidInput(format!(
                "subset size must be in 1..={total}, got {size}"
            )));
        }
        Ok(Self {
            total,
            size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: Vec::new(),
        })
    }

    pub fn is_full(&self) -> bool {
        self.size == self.total
    }

    pub fn next_subset(&mut self) -> Vec<usize> {
        if self.is_full() {
            return (0..self.total).collect();
        }
        if self.pending.is_empty() {
            let mut perm: Vec<usize> = (0..self.total).collect();
            perm.shuffle(&mut self.rng);
            let mut blocks: Vec<Vec<usize>> = perm
                .chunks_exact(self.size)
                .map(|c| {
                    let mut b = c.to_vec();
                    b.sort_unstable();
                    b
                })
                .collect();
            blocks.reverse();
            self.pending = blocks;
        }
        self.pending.pop().expect("non-empty epoch")
    }
}
