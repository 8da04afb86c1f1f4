//! Matrix-free complex linear operators and the two least-squares solvers used
//! for every inversion in the pipeline: CG on the normal equations (CGLS form)
//! and Nesterov-accelerated gradient descent.

use num_complex::Complex64;
use std::ops::ControlFlow;

use crate::error::{OdtError, Result};
use crate::fft::Scratch;
use crate::linalg::{self, axpy};

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[Complex64], out: &mut [Complex64], scratch: &mut Scratch);
    fn apply_adjoint(&self, x: &[Complex64], out: &mut [Complex64], scratch: &mut Scratch);
}

/// Swaps an operator with its adjoint.
pub struct Adjoint<'a, T: ?Sized>(pub &'a T);

impl<T: LinearOperator + ?Sized> LinearOperator for Adjoint<'_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, x: &[Complex64], out: &mut [Complex64], scratch: &mut Scratch) {
        self.0.apply_adjoint(x, out, scratch)
    }
    fn apply_adjoint(&self, x: &[Complex64], out: &mut [Complex64], scratch: &mut Scratch) {
        self.0.apply(x, out, scratch)
    }
}

/// Iteration cap and relative-change stopping threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverBudget {
    pub max_iters: usize,
    pub rel_change_tol: f64,
}

impl SolverBudget {
    pub fn new(max_iters: usize, rel_change_tol: f64) -> Result<Self> {
        if max_iters == 0 {
            return Err(OdtError::InvalidInput("max_iters must be >= 1".into()));
        }
        if !(rel_change_tol > 0.0 && rel_change_tol.is_finite()) {
            return Err(OdtError::InvalidInput(format!(
                "relative-change tolerance must be positive, got {rel_change_tol}"
            )));
        }
        Ok(Self {
            max_iters,
            rel_change_tol,
        })
    }
}

impl Default for SolverBudget {
    /// 120 iterations or a relative change below 1e-4.
    fn default() -> Self {
        Self {
            max_iters: 120,
            rel_change_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// `‖x_k − x_{k−1}‖ / ‖x_{k−1}‖` at the last iteration.
    pub final_step_change: f64,
    /// `‖A x − b‖` after each iteration, index 0 being the initial guess.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

impl SolveStats {
    pub fn residual_norm(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::NAN)
    }
}

fn guard(v: &[Complex64], solver: &'static str) -> Result<()> {
    if linalg::is_finite(v) {
        Ok(())
    } else {
        Err(OdtError::NonFinite(format!("{solver} iterate")))
    }
}

/// Minimizes `‖A x − b‖²` by conjugate gradients on `A^H A x = A^H b`, starting
/// from `x` in place. `observe(k, x_k)` is called after every iteration and may
/// stop the solve early by returning `Break`.
pub fn cgls<Op, F>(
    op: &Op,
    b: &[Complex64],
    x: &mut [Complex64],
    budget: SolverBudget,
    mut observe: F,
) -> Result<SolveStats>
where
    Op: LinearOperator + ?Sized,
    F: FnMut(usize, &[Complex64]) -> ControlFlow<()>,
{
    let n = op.dim();
    let mut scratch = Scratch::default();
    let zero = Complex64::new(0.0, 0.0);
    let mut r = vec![zero; n];
    let mut s = vec![zero; n];
    let mut q = vec![zero; n];

    op.apply(x, &mut r, &mut scratch);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    op.apply_adjoint(&r, &mut s, &mut scratch);
    let mut p = s.clone();
    let mut gamma = linalg::norm_sqr(&s);
    let mut history = vec![linalg::norm(&r)];
    let mut stats = SolveStats {
        iterations: 0,
        final_step_change: 0.0,
        residual_history: Vec::new(),
        converged: gamma == 0.0,
    };
    if gamma == 0.0 {
        stats.residual_history = history;
        return Ok(stats);
    }

    for k in 1..=budget.max_iters {
        op.apply(&p, &mut q, &mut scratch);
        let qq = linalg::norm_sqr(&q);
        if qq == 0.0 {
            stats.converged = true;
            break;
        }
        let alpha = gamma / qq;
        let x_norm = linalg::norm(x);
        let step = alpha * linalg::norm(&p);
        axpy(Complex64::new(alpha, 0.0), &p, x);
        axpy(Complex64::new(-alpha, 0.0), &q, &mut r);
        guard(x, "CG")?;
        op.apply_adjoint(&r, &mut s, &mut scratch);
        let gamma_new = linalg::norm_sqr(&s);

        stats.iterations = k;
        stats.final_step_change = if x_norm > 0.0 { step / x_norm } else { f64::INFINITY };
        history.push(linalg::norm(&r));
        if observe(k, x).is_break() {
            break;
        }

        if stats.final_step_change < budget.rel_change_tol || gamma_new == 0.0 {
            stats.converged = true;
            break;
        }
        let beta = gamma_new / gamma;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
        gamma = gamma_new;
    }
    stats.residual_history = history;
    Ok(stats)
}

/// Largest eigenvalue of `A^H A`, by `iters` power iterations from `start`.
pub fn estimate_lipschitz<Op: LinearOperator + ?Sized>(
    op: &Op,
    start: &[Complex64],
    iters: usize,
) -> f64 {
    let n = op.dim();
    let mut scratch = Scratch::default();
    let mut z: Vec<Complex64> = start.to_vec();
    if linalg::norm(&z) == 0.0 {
        z = vec![Complex64::new(1.0, 0.0); n];
    }
    let mut az = vec![Complex64::new(0.0, 0.0); n];
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut lambda = 0.0;
    for _ in 0..iters {
        let zn = linalg::norm(&z);
        for v in z.iter_mut() {
            *v /= zn;
        }
        op.apply(&z, &mut az, &mut scratch);
        op.apply_adjoint(&az, &mut w, &mut scratch);
        lambda = linalg::norm(&w);
        std::mem::swap(&mut z, &mut w);
    }
    lambda
}

/// Nesterov-accelerated gradient descent on `½‖A x − b‖²`.
///
/// The step starts at `1/L̂` with `L̂` from ten power iterations on `A^H A`.
/// When an iterate increases the objective it is rejected, the step halved and
/// the momentum restarted. `A x` is carried along by linearity so each
/// iteration costs one `A` and one `A^H`, the same as CG.
pub fn nagd<Op, F>(
    op: &Op,
    b: &[Complex64],
    x: &mut [Complex64],
    budget: SolverBudget,
    mut observe: F,
) -> Result<SolveStats>
where
    Op: LinearOperator + ?Sized,
    F: FnMut(usize, &[Complex64]) -> ControlFlow<()>,
{
    let n = op.dim();
    let mut scratch = Scratch::default();
    let zero = Complex64::new(0.0, 0.0);
    let lip = estimate_lipschitz(op, b, 10);
    let mut step = if lip > 0.0 { 1.0 / lip } else { 1.0 };

    let mut ax = vec![zero; n];
    op.apply(x, &mut ax, &mut scratch);
    let mut x_prev = x.to_vec();
    let mut ax_prev = ax.clone();
    let objective = |ax: &[Complex64]| 0.5 * linalg::diff_norm(ax, b).powi(2);
    let mut phi = objective(&ax);
    let mut history = vec![(2.0 * phi).sqrt()];
    let mut t = 1.0_f64;

    let mut y = vec![zero; n];
    let mut ay = vec![zero; n];
    let mut g = vec![zero; n];
    let mut ag = vec![zero; n];
    let mut x_new = vec![zero; n];
    let mut ax_new = vec![zero; n];
    let mut stats = SolveStats {
        iterations: 0,
        final_step_change: 0.0,
        residual_history: Vec::new(),
        converged: false,
    };

    for k in 1..=budget.max_iters {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for i in 0..n {
            y[i] = x[i] + beta * (x[i] - x_prev[i]);
            ay[i] = ax[i] + beta * (ax[i] - ax_prev[i]);
        }
        let res: Vec<Complex64> = ay.iter().zip(b).map(|(a, bi)| a - bi).collect();
        op.apply_adjoint(&res, &mut g, &mut scratch);
        op.apply(&g, &mut ag, &mut scratch);
        for i in 0..n {
            x_new[i] = y[i] - step * g[i];
            ax_new[i] = ay[i] - step * ag[i];
        }
        guard(&x_new, "NAGD")?;
        let phi_new = objective(&ax_new);
        stats.iterations = k;

        if phi_new > phi {
            step *= 0.5;
            t = 1.0;
            x_prev.copy_from_slice(x);
            ax_prev.copy_from_slice(&ax);
            history.push((2.0 * phi).sqrt());
            if observe(k, x).is_break() {
                break;
            }
            continue;
        }

        let x_norm = linalg::norm(x);
        let change = linalg::diff_norm(&x_new, x);
        stats.final_step_change = if x_norm > 0.0 { change / x_norm } else { f64::INFINITY };
        x_prev.copy_from_slice(x);
        ax_prev.copy_from_slice(&ax);
        x.copy_from_slice(&x_new);
        ax.copy_from_slice(&ax_new);
        phi = phi_new;
        t = t_next;
        history.push((2.0 * phi).sqrt());
        if observe(k, x).is_break() {
            break;
        }

        if stats.final_step_change < budget.rel_change_tol {
            stats.converged = true;
            break;
        }
    }
    stats.residual_history = history;
    Ok(stats)
}
