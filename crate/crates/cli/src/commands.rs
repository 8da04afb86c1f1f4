use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use odt_core::forward::{relative_error, solve_forward_observed};
use odt_core::gradient::grad_dp;
use odt_core::grid::{potential_from_ri, ri_from_potential, snr_db};
use odt_core::io::{read_measurements, write_field, write_measurements, write_pgm, write_trace_csv, FieldData, RunConfig};
use odt_core::mie::mie_total_field;
use odt_core::recon::{reconstruct as run_recon, ReconProblem, ReconStatus};
use odt_core::sim::{bead_phantom, format_bytes, predict_memory_delta, simulate as run_sim};
use odt_core::{
    BeadSpec, ComplexField, DetectorGeometry, DetectorOperator, ForwardSolver, GreenKernel, Grid2D, IlluminationRecord,
    OdtError, PlaneWave, ScatteringPotential, SolverBudget,
};

use crate::Failure;

/// Largest tolerated Mie rim mismatch before the oracle is considered broken.
const MIE_RESIDUAL_LIMIT: f64 = 1e-8;

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::new(2, format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::new(2, format!("cannot create {}: {e}", path.display())))
}

fn write_with<F>(path: &Path, body: F) -> Result<(), Failure>
where
    F: FnOnce(&mut BufWriter<File>) -> odt_core::Result<()>,
{
    let mut w = create(path)?;
    body(&mut w)?;
    w.flush().map_err(OdtError::from)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn simulate(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    let phys = config.physics()?;
    let protocol = config.sim_protocol()?;
    let phantom = config.phantom_on(&protocol.fine_grid)?;
    let start = Instant::now();
    let data = run_sim(&phantom, &protocol, &phys, config.sim_budget()?)?;
    let unconverged = data.converged.iter().filter(|c| !**c).count();
    if unconverged > 0 {
        eprintln!("warning: {unconverged} of {} fine-grid solves hit the iteration budget", data.len());
    }
    println!(
        "simulated {} angles x {} detectors on a {}x{} grid in {:.1} s",
        data.len(),
        data.detector_count(),
        protocol.fine_grid.n_side(),
        protocol.fine_grid.n_side(),
        start.elapsed().as_secs_f64()
    );
    write_with(&with_suffix(out, ".odtm"), |w| write_measurements(w, &data))?;
    write_with(&with_suffix(out, "_phantom.odtf"), |w| {
        write_field(w, &FieldData::real_square(phantom.values().to_vec())?)
    })?;
    write_with(&with_suffix(out, "_phantom.pgm"), |w| {
        write_pgm(w, phantom.values(), protocol.fine_grid.n_side())
    })
}

pub fn forward(config: &RunConfig, out: &Path, angle_deg: f64) -> Result<(), Failure> {
    let phys = config.physics()?;
    let grid = config.recon_grid()?;
    let f = potential_from_ri(&config.phantom_on(&grid)?, &phys);
    let kernel = GreenKernel::new(&grid, &phys)?;
    let u_in = PlaneWave::new(angle_deg.to_radians(), config.source_distance)?.on_grid(&grid, &phys);
    let budget = SolverBudget::new(config.forward_max_iters, config.forward_tol)?;
    let start = Instant::now();
    let rep = solve_forward_observed(config.forward_solver, &kernel, &f, &u_in, budget, |_, _| {
        ControlFlow::Continue(())
    })?;
    println!(
        "{} forward solve: {} iterations, residual {:.3e}, converged {}, {:.2} s",
        config.forward_solver,
        rep.iterations,
        rep.residual_norm,
        rep.converged,
        start.elapsed().as_secs_f64()
    );
    write_with(&with_suffix(out, "_u.odtf"), |w| {
        write_field(w, &FieldData::complex_square(rep.field.values().to_vec())?)
    })
}

pub fn reconstruct(config: &RunConfig, data_path: &Path, out: &Path) -> Result<(), Failure> {
    let phys = config.physics()?;
    let grid = config.recon_grid()?;
    let file = File::open(data_path)
        .map_err(|e| Failure::new(2, format!("cannot open {}: {e}", data_path.display())))?;
    let data = read_measurements(&mut BufReader::new(file))?;
    if let Some(nb) = data.metadata.get("n_b").and_then(|v| v.parse::<f64>().ok()) {
        if (nb - phys.n_b()).abs() > 1e-12 {
            return Err(Failure::new(
                3,
                format!("measurements were simulated with n_b = {nb}, config has {}", phys.n_b()),
            ));
        }
    }
    let problem = ReconProblem::new(&data, &grid, &phys).map_err(|e| Failure::new(3, e.to_string()))?;
    let recon = config.recon_config()?;
    let start = Instant::now();
    let output = run_recon(&problem, &recon, &ScatteringPotential::zeros(grid))?;
    println!(
        "{} outer iterations in {:.1} s",
        output.trace.records.len(),
        start.elapsed().as_secs_f64()
    );
    for line in &output.trace.log {
        eprintln!("note: {line}");
    }
    if let Ok(truth) = config.phantom_on(&grid) {
        let truth = potential_from_ri(&truth, &phys);
        if let Ok(snr) = snr_db(&output.f, &truth) {
            println!("SNR against the configured phantom: {snr:.2} dB");
        }
    }
    let n_map = ri_from_potential(&output.f, &phys);
    write_with(&with_suffix(out, "_f.odtf"), |w| {
        write_field(w, &FieldData::real_square(output.f.values().to_vec())?)
    })?;
    write_with(&with_suffix(out, "_n.pgm"), |w| write_pgm(w, n_map.values(), grid.n_side()))?;
    write_with(&with_suffix(out, "_trace.csv"), |w| write_trace_csv(w, &output.trace))?;
    match output.status {
        ReconStatus::Completed => Ok(()),
        ReconStatus::Aborted { iteration, reason } => Err(Failure::new(
            5,
            format!("reconstruction aborted at iteration {iteration}: {reason}"),
        )),
    }
}

/// First iteration with `ε_k ≤ eps0`; iteration 0 is the incident field.
#[allow(clippy::too_many_arguments)]
fn track(
    solver: ForwardSolver,
    kernel: &GreenKernel,
    f: &ScatteringPotential,
    u_in: &ComplexField,
    mie: &[Complex64],
    eps0: f64,
    max_iters: usize,
    rows: &mut Vec<(usize, f64)>,
) -> Result<Option<usize>, Failure> {
    let e0 = relative_error(u_in.values(), mie)?;
    rows.push((0, e0));
    if e0 <= eps0 {
        return Ok(Some(0));
    }
    let mut hit = None;
    let budget = SolverBudget::new(max_iters, 1e-15)?;
    solve_forward_observed(solver, kernel, f, u_in, budget, |k, u| {
        let e = relative_error(u, mie).unwrap_or(f64::NAN);
        rows.push((k, e));
        if e <= eps0 {
            hit = Some(k);
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    Ok(hit)
}

pub fn validate_mie(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    let phys = config.physics()?;
    let grid = Grid2D::new(config.mie_n, config.mie_side)?;
    let kernel = GreenKernel::new(&grid, &phys)?;
    let wave = PlaneWave::new(0.0, 0.5 * config.mie_side)?;
    let u_in = wave.on_grid(&grid, &phys);
    let csv_path = with_suffix(out, "_mie.csv");
    let mut csv = create(&csv_path)?;
    writeln!(csv, "contrast,solver,iteration,eps").map_err(OdtError::from)?;

    let fmt = |k: Option<usize>| k.map_or(format!(">{}", config.mie_max_iters), |k| k.to_string());
    println!("{:>8}  {:>8}  {:>8}", "contrast", "k_cg", "k_nagd");
    for &contrast in &config.mie_contrasts {
        let bead = BeadSpec::with_contrast(config.mie_radius, contrast, &phys)?;
        let mie = mie_total_field(&bead, &phys, &grid, &wave)?;
        if mie.coeff_residual > MIE_RESIDUAL_LIMIT {
            return Err(Failure::new(
                4,
                format!(
                    "Mie series residual {:.2e} exceeds {MIE_RESIDUAL_LIMIT:e} at contrast {contrast}",
                    mie.coeff_residual
                ),
            ));
        }
        let f = potential_from_ri(&bead_phantom(&grid, &bead, &phys)?, &phys);
        let mut ks = Vec::new();
        for solver in [ForwardSolver::Cg, ForwardSolver::Nagd] {
            let mut rows = Vec::new();
            let k = track(
                solver,
                &kernel,
                &f,
                &u_in,
                mie.field.values(),
                config.mie_eps0,
                config.mie_max_iters,
                &mut rows,
            )?;
            for (it, e) in rows {
                writeln!(csv, "{contrast},{solver},{it},{e:e}").map_err(OdtError::from)?;
            }
            ks.push(k);
        }
        println!("{contrast:>8}  {:>8}  {:>8}", fmt(ks[0]), fmt(ks[1]));
    }
    csv.flush().map_err(OdtError::from)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

pub fn bench(config: &RunConfig) -> Result<(), Failure> {
    let phys = config.physics()?;
    let grid = config.recon_grid()?;
    let f = potential_from_ri(&config.phantom_on(&grid)?, &phys);
    let kernel = GreenKernel::new(&grid, &phys)?;
    let wave = PlaneWave::new(0.0, config.source_distance)?;
    let u_in = wave.on_grid(&grid, &phys);
    let recon = config.recon_config()?;
    println!(
        "grid {}x{}, {} worker threads",
        grid.n_side(),
        grid.n_side(),
        rayon::current_num_threads()
    );
    for solver in [ForwardSolver::Cg, ForwardSolver::Nagd] {
        let start = Instant::now();
        let rep = solve_forward_observed(solver, &kernel, &f, &u_in, recon.forward_budget, |_, _| {
            ControlFlow::Continue(())
        })?;
        println!(
            "{solver:>5} forward: {:>5} iterations, {:>8.1} ms",
            rep.iterations,
            start.elapsed().as_secs_f64() * 1e3
        );
    }
    let half = 0.5 * grid.side_len();
    let y = half + 0.25 * grid.pixel();
    let mut positions = DetectorGeometry::line(-y, -half, half, grid.n_side());
    positions.extend(DetectorGeometry::line(y, -half, half, grid.n_side()));
    let detector = DetectorOperator::new(DetectorGeometry::new(positions, grid)?, &phys)?;
    let illum = IlluminationRecord {
        u_in_on_gamma: wave.at_points(&phys, detector.geometry().positions()),
        y_sc: vec![Complex64::new(0.0, 0.0); detector.rows()],
        u_in,
        angle: 0.0,
    };
    let start = Instant::now();
    grad_dp(&kernel, &detector, &f, &illum, &recon.gradient_settings())?;
    println!(
        "one-illumination gradient: {:.1} ms",
        start.elapsed().as_secs_f64() * 1e3
    );
    Ok(())
}

pub fn predict_memory(pixels: u64, iterations: u64, threads: u64) -> Result<(), Failure> {
    println!("{}", format_bytes(predict_memory_delta(pixels, iterations, threads)?));
    Ok(())
}
