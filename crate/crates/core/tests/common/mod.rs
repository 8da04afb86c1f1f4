#![allow(dead_code)]

use std::ops::ControlFlow;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use odt_core::forward::{relative_error, solve_forward_observed};
use odt_core::greens::{green_2d, self_cell_integral};
use odt_core::grid::potential_from_ri;
use odt_core::mie::mie_total_field;
use odt_core::recon::ReconProblem;
use odt_core::sim::{bead_phantom, shepp_logan, simulate_same_grid, uniform_angles};
use odt_core::*;

pub fn water() -> PhysicsParams {
    PhysicsParams::normalized(1.333).unwrap()
}

pub fn tight() -> SolverBudget {
    SolverBudget::new(5000, 1e-14).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pixelwise uniform potential in `[0, contrast · k0² n_b²]`.
pub fn random_potential(grid: Grid2D, contrast: f64, phys: &PhysicsParams, seed: u64) -> ScatteringPotential {
    let peak = contrast * (phys.k0() * phys.n_b()).powi(2);
    let mut r = rng(seed);
    let values = (0..grid.len()).map(|_| r.gen_range(0.0..peak)).collect();
    ScatteringPotential::new(grid, values).unwrap()
}

pub fn random_complex(len: usize, seed: u64) -> Vec<Complex64> {
    let mut r = rng(seed);
    (0..len)
        .map(|_| Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
        .collect()
}

pub fn random_real(len: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len).map(|_| r.gen_range(lo..hi)).collect()
}

/// `‖a − b‖ / ‖b‖`.
pub fn rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

pub fn rel_diff_real(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Explicitly assembled `N × N` matrix of `G` from pointwise kernel values.
pub fn dense_green(grid: &Grid2D, phys: &PhysicsParams) -> DMatrix<Complex64> {
    let pts: Vec<[f64; 2]> = grid.coords().collect();
    let k = phys.k_bg();
    let diag = self_cell_integral(k, grid.pixel()).unwrap();
    DMatrix::from_fn(pts.len(), pts.len(), |i, j| {
        if i == j {
            diag
        } else {
            let r = (pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]);
            grid.pixel_area() * green_2d(k, r).unwrap()
        }
    })
}

pub fn to_vector(v: &[Complex64]) -> nalgebra::DVector<Complex64> {
    nalgebra::DVector::from_column_slice(v)
}

/// Detector lines a quarter pixel outside the top and bottom edges.
pub fn edge_detectors(grid: &Grid2D, per_side: usize) -> Vec<[f64; 2]> {
    let half = 0.5 * grid.side_len();
    let y = half + 0.25 * grid.pixel();
    let mut out = DetectorGeometry::line(-y, -half, half, per_side);
    out.extend(DetectorGeometry::line(y, -half, half, per_side));
    out
}

pub struct BeadFixture {
    pub grid: Grid2D,
    pub phys: PhysicsParams,
    pub kernel: GreenKernel,
    pub f: ScatteringPotential,
    pub u_in: ComplexField,
    pub mie: ComplexField,
    pub bead: BeadSpec,
    pub wave: PlaneWave,
}

/// Bead of radius 3λ centred in a 16λ square, lit at normal incidence.
pub fn bead_fixture(n_side: usize, contrast: f64) -> BeadFixture {
    let phys = water();
    let grid = Grid2D::new(n_side, 16.0).unwrap();
    let bead = BeadSpec::with_contrast(3.0, contrast, &phys).unwrap();
    let wave = PlaneWave::new(0.0, 8.0).unwrap();
    let f = potential_from_ri(&bead_phantom(&grid, &bead, &phys).unwrap(), &phys);
    let mie = mie_total_field(&bead, &phys, &grid, &wave).unwrap().field;
    BeadFixture {
        kernel: GreenKernel::new(&grid, &phys).unwrap(),
        u_in: wave.on_grid(&grid, &phys),
        grid,
        phys,
        f,
        mie,
        bead,
        wave,
    }
}

/// First iteration with `ε_k ≤ eps0` within `max_iters`, and the smallest `ε_k` seen.
pub fn k_eps0(fx: &BeadFixture, solver: ForwardSolver, max_iters: usize, eps0: f64) -> (Option<usize>, f64) {
    let mut hit = None;
    let mut best = f64::INFINITY;
    let budget = SolverBudget::new(max_iters, 1e-15).unwrap();
    solve_forward_observed(solver, &fx.kernel, &fx.f, &fx.u_in, budget, |k, u| {
        let e = relative_error(u, fx.mie.values()).unwrap();
        best = best.min(e);
        if e <= eps0 {
            hit = Some(k);
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    (hit, best)
}

pub struct InverseCrime {
    pub problem: ReconProblem,
    pub truth: ScatteringPotential,
    pub phys: PhysicsParams,
}

/// 64² Shepp-Logan at contrast 0.2 with the pixel pitch of a 16.5λ/128 grid,
/// 8 angles in ±60°, 132 detectors per side on lines 8.25λ from the centre.
pub fn inverse_crime() -> InverseCrime {
    let phys = water();
    let side = 16.5 / 2.0;
    let grid = Grid2D::new(64, side).unwrap();
    let truth = potential_from_ri(&shepp_logan(&grid, 0.2, &phys).unwrap(), &phys);
    let mut positions = DetectorGeometry::line(-side, -2.0 * side, 2.0 * side, 132);
    positions.extend(DetectorGeometry::line(side, -2.0 * side, 2.0 * side, 132));
    let angles = uniform_angles(8, (-60f64).to_radians(), 60f64.to_radians());
    let data = simulate_same_grid(&truth, positions, &angles, side, &phys, SolverBudget::new(3000, 1e-13).unwrap())
        .unwrap();
    InverseCrime {
        problem: ReconProblem::new(&data, &grid, &phys).unwrap(),
        truth,
        phys,
    }
}
