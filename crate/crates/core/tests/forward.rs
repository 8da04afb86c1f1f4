mod common;

use common::*;
use num_complex::Complex64;

use odt_core::forward::{ls_apply, measure, relative_error, solve_forward_cg, solve_forward_nagd};
use odt_core::mie::mie_scattered_at;
use odt_core::*;

#[test]
fn cg_and_nagd_agree_with_dense_solve() {
    let phys = water();
    for (seed, n) in [(0u64, 8usize), (1, 12)] {
        let grid = Grid2D::new(n, 0.15 * n as f64).unwrap();
        let kernel = GreenKernel::new(&grid, &phys).unwrap();
        let f = random_potential(grid, 0.2, &phys, seed);
        let u_in = PlaneWave::new(0.3, 1.0).unwrap().on_grid(&grid, &phys);

        let g = dense_green(&grid, &phys);
        let fdiag = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            grid.len(),
            f.values().iter().map(|&x| Complex64::new(x, 0.0)),
        ));
        let a = nalgebra::DMatrix::identity(grid.len(), grid.len()) - &g * &fdiag;
        let exact = a.lu().solve(&to_vector(u_in.values())).unwrap();

        let cg = solve_forward_cg(&kernel, &f, &u_in, tight()).unwrap();
        assert!(rel_diff(cg.field.values(), exact.as_slice()) < 1e-9);
        let nagd = solve_forward_nagd(&kernel, &f, &u_in, SolverBudget::new(20000, 1e-15).unwrap()).unwrap();
        assert!(rel_diff(nagd.field.values(), exact.as_slice()) < 1e-6);
    }
}

#[test]
fn cg_field_residual_is_monotone() {
    let phys = water();
    let grid = Grid2D::new(16, 2.0).unwrap();
    let kernel = GreenKernel::new(&grid, &phys).unwrap();
    let f = random_potential(grid, 0.3, &phys, 4);
    let u_in = PlaneWave::new(0.0, 1.0).unwrap().on_grid(&grid, &phys);
    let mut last = f64::INFINITY;
    for iters in [1, 2, 4, 8, 16, 32] {
        let rep = solve_forward_cg(&kernel, &f, &u_in, SolverBudget::new(iters, 1e-15).unwrap()).unwrap();
        assert!(rep.residual_norm <= last * (1.0 + 1e-12));
        assert_eq!(rep.residual_history.len(), rep.iterations + 1);
        assert!(rep.residual_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        last = rep.residual_norm;
    }
    let check = ls_apply(&kernel, &f, &solve_forward_cg(&kernel, &f, &u_in, tight()).unwrap().field).unwrap();
    assert!(rel_diff(check.values(), u_in.values()) < 1e-10);
}

#[test]
fn detector_line_matches_mie_scattering() {
    let fx = bead_fixture(256, 0.3);
    let u = solve_forward_cg(&fx.kernel, &fx.f, &fx.u_in, SolverBudget::new(400, 1e-10).unwrap())
        .unwrap()
        .field;
    let positions = DetectorGeometry::line(8.5, -7.5, 7.5, 48);
    let detector = DetectorOperator::new(DetectorGeometry::new(positions.clone(), fx.grid).unwrap(), &fx.phys).unwrap();
    let zeros = vec![Complex64::new(0.0, 0.0); positions.len()];
    let y_sc = measure(&detector, &fx.f, &u, &zeros).unwrap();
    let mie = mie_scattered_at(&positions, &fx.bead, &fx.phys, &fx.wave).unwrap();
    let err = rel_diff(&y_sc, &mie);
    assert!(err < 3e-2, "detector mismatch {err:.3e}");
}

#[test]
fn weak_bead_reaches_mie_accuracy_quickly() {
    let fx = bead_fixture(128, 0.1);
    let (hit, best) = k_eps0(&fx, ForwardSolver::Cg, 200, 1e-2);
    assert!(hit.is_some_and(|k| k < 50), "k = {hit:?}, best = {best:e}");
    let u = solve_forward_cg(&fx.kernel, &fx.f, &fx.u_in, SolverBudget::new(200, 1e-12).unwrap()).unwrap();
    assert!(relative_error(u.field.values(), fx.mie.values()).unwrap() < 1e-2);
}
