//! Accelerated forward-backward splitting for
//! `min_f Σ_p D_p(f) + μ (i_{≥0}(f) + ‖∇f‖_{2,1})`.
//!
//! Each outer iteration takes a stochastic gradient step at the extrapolated
//! point `v^k` over an illumination subset `ω^k`, applies the TV prox with
//! weight `γμ`, then extrapolates with the momentum rule.

use crate::error::{OdtError, Result};
use crate::forward::{ForwardSolver, SolverBudget};
use crate::gradient::{fidelity, grad_d_subset, GradientSettings, IlluminationRecord, SubsetSchedule};
use crate::greens::{DetectorOperator, GreenKernel};
use crate::grid::{Grid2D, PhysicsParams, ScatteringPotential};
use crate::linalg;
use crate::prox::{tv, ProxParams, TvProx};
use crate::sim::MeasurementSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentumRule {
    /// `t₁ = 1`, `t_{k+1} = (1 + √(1 + 4t_k²))/2`, `α^k = (t_k − 1)/t_{k+1}`.
    Fista,
    Constant(f64),
    None,
}

impl MomentumRule {
    pub fn sequence(&self) -> MomentumSequence {
        MomentumSequence { rule: *self, t: 1.0 }
    }
}

impl std::fmt::Display for MomentumRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Fista => f.write_str("fista"),
            Self::Constant(a) => write!(f, "constant:{a}"),
            Self::None => f.write_str("none"),
        }
    }
}

impl std::str::FromStr for MomentumRule {
    type Err = OdtError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fista" => Ok(Self::Fista),
            "none" => Ok(Self::None),
            _ => {
                let value = s
                    .strip_prefix("constant:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|a| (0.0..1.0).contains(a))
                    .ok_or_else(|| {
                        OdtError::InvalidInput(format!(
                            "momentum must be fista, none or constant:<a in [0,1)>, got '{s}'"
                        ))
                    })?;
                Ok(Self::Constant(value))
            }
        }
    }
}

/// Yields `α¹, α², …`.
#[derive(Debug, Clone)]
pub struct MomentumSequence {
    rule: MomentumRule,
    t: f64,
}

impl Iterator for MomentumSequence {
    type Item = f64;
    fn next(&mut self) -> Option<f64> {
        Some(match self.rule {
            MomentumRule::Fista => {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * self.t * self.t).sqrt());
                let alpha = (self.t - 1.0) / t_next;
                self.t = t_next;
                alpha
            }
            MomentumRule::Constant(a) => a,
            MomentumRule::None => 0.0,
        })
    }
}

/// `gamma` and `mu` refer to the continuous objective on `L²(Ω)`:
/// `D(f) + μ ∫|∇f|`. On a grid of pitch `h` the discrete step is `γ/h²` and the
/// discrete prox weight is `γμ/h`, so the same values work at any resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconConfig {
    pub gamma: f64,
    pub mu: f64,
    pub outer_iters: usize,
    pub subset_size: usize,
    pub solver: ForwardSolver,
    pub forward_budget: SolverBudget,
    pub jac_budget: SolverBudget,
    /// ρ1, ρ2 and the ADMM budget; its `mu` is replaced by `γμ/h` at run time.
    pub prox_params: ProxParams,
    pub momentum: MomentumRule,
    pub seed: u64,
    /// Keep `f^k` every this many iterations (0 disables).
    pub snapshot_every: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            gamma: 5e-3,
            mu: 3.3e-2,
            outer_iters: 200,
            subset_size: 8,
            solver: ForwardSolver::Cg,
            forward_budget: SolverBudget::default(),
            jac_budget: SolverBudget::default(),
            prox_params: ProxParams::with_mu(1.0).expect("valid defaults"),
            momentum: MomentumRule::Fista,
            seed: 0,
            snapshot_every: 0,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self, illuminations: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(OdtError::InvalidInput(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(OdtError::InvalidInput(format!("mu must be > 0, got {}", self.mu)));
        }
        if self.outer_iters == 0 {
            return Err(OdtError::InvalidInput("outer_iters must be >= 1".into()));
        }
        if self.subset_size == 0 || self.subset_size > illuminations {
            return Err(OdtError::InvalidInput(format!(
                "subset_size must be in 1..={illuminations}, got {}",
                self.subset_size
            )));
        }
        self.prox_params.validate()
    }

    /// `(γ/h², γμ/h)`: gradient step and prox weight on `grid`.
    pub fn discrete_weights(&self, grid: &Grid2D) -> (f64, f64) {
        let h = grid.pixel();
        (self.gamma / (h * h), self.gamma * self.mu / h)
    }

    pub fn gradient_settings(&self) -> GradientSettings {
        GradientSettings {
            solver: self.solver,
            forward: self.forward_budget,
            jacobian: self.jac_budget,
        }
    }
}

/// Operators and data for one reconstruction grid.
#[derive(Debug, Clone)]
pub struct ReconProblem {
    pub kernel: GreenKernel,
    pub detector: DetectorOperator,
    pub illuminations: Vec<IlluminationRecord>,
}

impl ReconProblem {
    pub fn new(data: &MeasurementSet, grid: &Grid2D, phys: &PhysicsParams) -> Result<Self> {
        Ok(Self {
            kernel: GreenKernel::new(grid, phys)?,
            detector: data.detector(grid, phys)?,
            illuminations: data.illuminations(grid, phys)?,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        self.kernel.grid()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Data term over `ω^k` at the extrapolated point `v^k`.
    pub fidelity: f64,
    /// `h · TV(f^k)`, the regularizer in the units of `mu`.
    pub tv: f64,
    pub grad_norm: f64,
    pub subset: Vec<usize>,
    pub alpha: f64,
    pub gamma: f64,
    pub snapshot: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReconTrace {
    pub records: Vec<IterationRecord>,
    /// Human-readable events such as step halvings.
    pub log: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReconStatus {
    Completed,
    Aborted { iteration: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconOutput {
    pub f: ScatteringPotential,
    pub trace: ReconTrace,
    pub snapshots: Vec<(usize, Vec<f64>)>,
    pub status: ReconStatus,
}

/// Data term and regularizer at `f`; the indicator is reported as a flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub fidelity: f64,
    /// `h Σ_n ‖(∇f)_n‖`, the grid approximation of `∫|∇f|`.
    pub tv: f64,
    pub feasible: bool,
}

impl ObjectiveValue {
    pub fn total(&self, mu: f64) -> f64 {
        if self.feasible {
            self.fidelity + mu * self.tv
        } else {
            f64::INFINITY
        }
    }
}

pub fn fidelity_and_reg(
    problem: &ReconProblem,
    f: &ScatteringPotential,
    settings: &GradientSettings,
) -> Result<ObjectiveValue> {
    Ok(ObjectiveValue {
        fidelity: fidelity(&problem.kernel, &problem.detector, f, &problem.illuminations, settings)?,
        tv: tv_integral(f),
        feasible: f.values().iter().all(|&v| v >= 0.0),
    })
}

fn tv_integral(f: &ScatteringPotential) -> f64 {
    f.grid().pixel() * tv(f.values())
}

const MAX_STEP_HALVINGS: usize = 3;

fn is_numeric_failure(e: &OdtError) -> bool {
    matches!(e, OdtError::NonFinite(_) | OdtError::NotConverged { .. })
}

/// Runs the outer loop from `f0`. Numeric failures stop the loop and are
/// reported through [`ReconStatus::Aborted`] together with the partial trace.
pub fn reconstruct(
    problem: &ReconProblem,
    config: &ReconConfig,
    f0: &ScatteringPotential,
) -> Result<ReconOutput> {
    let grid = *problem.grid();
    if *f0.grid() != grid {
        return Err(OdtError::GridMismatch {
            expected: grid.n_side(),
            found: f0.values().len(),
        });
    }
    config.validate(problem.illuminations.len())?;
    let settings = config.gradient_settings();
    let prox_op = TvProx::new(grid.n_side());
    let mut schedule = SubsetSchedule::new(problem.illuminations.len(), config.subset_size, config.seed)?;
    let mut momentum = config.momentum.sequence();
    let monotone = config.momentum == MomentumRule::None && schedule.is_full();

    let mut f_prev = f0.values().to_vec();
    let mut v = f_prev.clone();
    let mut gamma = config.gamma;
    let mut halvings = 0;
    let mut objective_prev = if monotone {
        Some(fidelity_and_reg(problem, f0, &settings)?.total(config.mu))
    } else {
        None
    };
    let mut trace = ReconTrace::default();
    let mut snapshots = Vec::new();
    let mut status = ReconStatus::Completed;

    for k in 1..=config.outer_iters {
        let subset = schedule.next_subset();
        let v_field = ScatteringPotential::new(grid, v.clone())?;
        let report = match grad_d_subset(
            &problem.kernel,
            &problem.detector,
            &v_field,
            &problem.illuminations,
            &subset,
            &settings,
        ) {
            Ok(r) => r,
            Err(e) if is_numeric_failure(&e) => {
                status = ReconStatus::Aborted {
                    iteration: k,
                    reason: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        };

        let mut f = loop {
            let (step_size, weight) = ReconConfig { gamma, ..*config }.discrete_weights(&grid);
            let step: Vec<f64> = v.iter().zip(&report.grad).map(|(a, g)| a - step_size * g).collect();
            let prox = ProxParams {
                mu: weight,
                ..config.prox_params
            };
            let candidate = prox_op.prox(&step, &prox)?.f;
            let Some(prev) = objective_prev.filter(|_| linalg::is_finite_real(&candidate)) else {
                break candidate;
            };
            let field = ScatteringPotential::new(grid, candidate.clone())?;
            let value = fidelity_and_reg(problem, &field, &settings)?.total(config.mu);
            if value <= prev || halvings >= MAX_STEP_HALVINGS {
                objective_prev = Some(value);
                break candidate;
            }
            halvings += 1;
            gamma *= 0.5;
            trace.log.push(format!(
                "iteration {k}: objective rose from {prev:.6e} to {value:.6e}; gamma halved to {gamma:e}"
            ));
        };

        if !linalg::is_finite_real(&f) {
            status = ReconStatus::Aborted {
                iteration: k,
                reason: "non-finite iterate".into(),
            };
            break;
        }
        let alpha = momentum.next().expect("infinite sequence");
        let next_v: Vec<f64> = f
            .iter()
            .zip(&f_prev)
            .map(|(a, b)| a + alpha * (a - b))
            .collect();

        let snapshot = config.snapshot_every > 0 && k % config.snapshot_every == 0;
        if snapshot {
            snapshots.push((k, f.clone()));
        }
        trace.records.push(IterationRecord {
            iteration: k,
            fidelity: report.fidelity,
            tv: grid.pixel() * tv(&f),
            grad_norm: linalg::real_norm(&report.grad),
            subset: report.subset,
            alpha,
            gamma,
            snapshot,
        });
        std::mem::swap(&mut f_prev, &mut f);
        v = next_v;
    }

    Ok(ReconOutput {
        f: ScatteringPotential::new(grid, f_prev)?,
        trace,
        snapshots,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fista_sequence_recurrence() {
        let alphas: Vec<f64> = MomentumRule::Fista.sequence().take(200).collect();
        assert_eq!(alphas[0], 0.0);
        assert!(alphas.windows(2).all(|w| w[1] > w[0]));
        assert!(alphas.iter().all(|&a| a < 1.0));
        assert!(alphas[199] > 0.98);
        // closed recurrence from t₁ = 1
        let mut t = 1.0_f64;
        for a in &alphas {
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            assert_eq!(*a, (t - 1.0) / tn);
            t = tn;
        }
        assert!(MomentumRule::None.sequence().take(5).all(|a| a == 0.0));
        assert!(MomentumRule::Constant(0.3).sequence().take(5).all(|a| a == 0.3));
    }

    #[test]
    fn momentum_parse_round_trip() {
        for m in [MomentumRule::Fista, MomentumRule::None, MomentumRule::Constant(0.25)] {
            assert_eq!(m.to_string().parse::<MomentumRule>().unwrap(), m);
        }
        assert!("constant:1.5".parse::<MomentumRule>().is_err());
        assert!("nesterov".parse::<MomentumRule>().is_err());
    }

    #[test]
    fn config_validation() {
        let c = ReconConfig::default();
        c.validate(31).unwrap();
        assert!(c.validate(4).is_err());
        assert!(ReconConfig { gamma: 0.0, ..c }.validate(31).is_err());
        assert!(ReconConfig { outer_iters: 0, ..c }.validate(31).is_err());
        assert!(ReconConfig { mu: -1.0, ..c }.validate(31).is_err());
    }
}
