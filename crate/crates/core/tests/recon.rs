mod common;

use common::*;
use num_complex::Complex64;
use rayon::ThreadPoolBuilder;

use odt_core::recon::{fidelity_and_reg, reconstruct, ReconConfig, ReconProblem, ReconStatus};
use odt_core::sim::{simulate_same_grid, uniform_angles};
use odt_core::*;

fn small_problem(contrast: f64, angles: usize) -> (ReconProblem, ScatteringPotential) {
    let phys = water();
    let grid = Grid2D::new(16, 2.0).unwrap();
    let mut values = vec![0.0; grid.len()];
    let peak = contrast * (phys.k0() * phys.n_b()).powi(2);
    for (v, [x, y]) in values.iter_mut().zip(grid.coords()) {
        if x.hypot(y) < 0.6 {
            *v = peak;
        }
    }
    let truth = ScatteringPotential::new(grid, values).unwrap();
    let positions = edge_detectors(&grid, 24);
    let data = simulate_same_grid(
        &truth,
        positions,
        &uniform_angles(angles, -1.0, 1.0),
        2.0,
        &phys,
        tight(),
    )
    .unwrap();
    (ReconProblem::new(&data, &grid, &phys).unwrap(), truth)
}

fn config(iters: usize, subset: usize) -> ReconConfig {
    ReconConfig {
        outer_iters: iters,
        subset_size: subset,
        forward_budget: SolverBudget::new(500, 1e-12).unwrap(),
        jac_budget: SolverBudget::new(500, 1e-12).unwrap(),
        ..ReconConfig::default()
    }
}

#[test]
fn zero_data_keeps_zero_fixed() {
    let (problem, _) = small_problem(0.05, 3);
    let zeroed = ReconProblem {
        illuminations: problem
            .illuminations
            .iter()
            .cloned()
            .map(|mut i| {
                i.y_sc.iter_mut().for_each(|y| *y = Complex64::new(0.0, 0.0));
                i
            })
            .collect(),
        ..problem
    };
    let f0 = ScatteringPotential::zeros(*zeroed.grid());
    let out = reconstruct(&zeroed, &ReconConfig { mu: 1e-6, ..config(5, 3) }, &f0).unwrap();
    assert_eq!(out.status, ReconStatus::Completed);
    assert!(out.f.values().iter().all(|&v| v == 0.0));
}

#[test]
fn objective_is_monotone_without_momentum() {
    let (problem, _) = small_problem(0.01, 4);
    let cfg = ReconConfig {
        momentum: MomentumRule::None,
        gamma: 0.05,
        ..config(12, 4)
    };
    let settings = cfg.gradient_settings();
    let f0 = ScatteringPotential::zeros(*problem.grid());
    let mut last = fidelity_and_reg(&problem, &f0, &settings).unwrap().total(cfg.mu);
    let out = reconstruct(&problem, &ReconConfig { snapshot_every: 1, ..cfg }, &f0).unwrap();
    assert_eq!(out.snapshots.len(), 12);
    for (_, f) in &out.snapshots {
        let field = ScatteringPotential::new(*problem.grid(), f.clone()).unwrap();
        let value = fidelity_and_reg(&problem, &field, &settings).unwrap().total(cfg.mu);
        assert!(value <= last * (1.0 + 1e-12), "{value} > {last}");
        last = value;
    }
}

#[test]
fn reconstruction_reduces_fidelity_and_error() {
    let (problem, truth) = small_problem(0.05, 6);
    let cfg = ReconConfig { gamma: 0.05, mu: 1e-3, ..config(40, 6) };
    let f0 = ScatteringPotential::zeros(*problem.grid());
    let out = reconstruct(&problem, &cfg, &f0).unwrap();
    let settings = cfg.gradient_settings();
    let d0 = fidelity_and_reg(&problem, &f0, &settings).unwrap().fidelity;
    let d = fidelity_and_reg(&problem, &out.f, &settings).unwrap().fidelity;
    assert!(d < 0.1 * d0, "D = {d:e}, D(0) = {d0:e}");
    assert!(rel_diff_real(out.f.values(), truth.values()) < 1.0);
    assert!(out.f.values().iter().all(|&v| v >= 0.0));
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let (problem, _) = small_problem(0.05, 6);
    let cfg = ReconConfig { seed: 17, ..config(6, 2) };
    let f0 = ScatteringPotential::zeros(*problem.grid());
    let run = |threads| {
        ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| reconstruct(&problem, &cfg, &f0).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.f, b.f);
    assert_eq!(a.trace, b.trace);
    let other = reconstruct(&problem, &ReconConfig { seed: 18, ..cfg }, &f0).unwrap();
    let subsets = |o: &odt_core::recon::ReconOutput| o.trace.records.iter().map(|r| r.subset.clone()).collect::<Vec<_>>();
    assert_ne!(subsets(&a), subsets(&other));
}

#[test]
fn trace_records_momentum_and_subsets() {
    let (problem, _) = small_problem(0.02, 4);
    let out = reconstruct(&problem, &ReconConfig { snapshot_every: 2, ..config(5, 2) }, &ScatteringPotential::zeros(*problem.grid()))
        .unwrap();
    let alphas: Vec<f64> = out.trace.records.iter().map(|r| r.alpha).collect();
    let mut t: f64 = 1.0;
    for a in alphas {
        let next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        assert!((a - (t - 1.0) / next).abs() < 1e-15);
        t = next;
    }
    assert!(out.trace.records.iter().all(|r| r.subset.len() == 2));
    assert_eq!(out.snapshots.iter().map(|s| s.0).collect::<Vec<_>>(), vec![2, 4]);
}

#[test]
fn fidelity_and_reg_examples() {
    let (problem, truth) = small_problem(0.05, 3);
    let settings = config(1, 1).gradient_settings();
    let at_truth = fidelity_and_reg(&problem, &truth, &settings).unwrap();
    assert!(at_truth.fidelity < 1e-10);
    assert!(at_truth.feasible);
    let h = problem.grid().pixel();
    assert!((at_truth.tv - h * odt_core::prox::tv(truth.values())).abs() < 1e-12);

    let zero = fidelity_and_reg(&problem, &ScatteringPotential::zeros(*problem.grid()), &settings).unwrap();
    let expected: f64 = problem
        .illuminations
        .iter()
        .map(|i| 0.5 * i.y_sc.iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum();
    assert!((zero.fidelity - expected).abs() < 1e-12 * expected);
    assert_eq!(zero.tv, 0.0);

    let mut neg = vec![0.0; problem.grid().len()];
    neg[0] = -1.0;
    let infeasible = fidelity_and_reg(&problem, &ScatteringPotential::new(*problem.grid(), neg).unwrap(), &settings).unwrap();
    assert!(!infeasible.feasible);
    assert_eq!(infeasible.total(1.0), f64::INFINITY);
}

#[test]
fn invalid_configuration_is_rejected() {
    let (problem, _) = small_problem(0.02, 3);
    let f0 = ScatteringPotential::zeros(*problem.grid());
    assert!(reconstruct(&problem, &config(2, 4), &f0).is_err());
    assert!(reconstruct(&problem, &ReconConfig { gamma: 0.0, ..config(2, 1) }, &f0).is_err());
    let wrong = ScatteringPotential::zeros(Grid2D::new(8, 1.0).unwrap());
    assert!(reconstruct(&problem, &config(2, 1), &wrong).is_err());
}
