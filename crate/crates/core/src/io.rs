//! Binary field and measurement containers, the flat `key=value` run
//! configuration, PGM images and trace CSV.
//!
//! All binary formats are little-endian and round-trip bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{OdtError, Result};
use crate::forward::{ForwardSolver, SolverBudget};
use crate::grid::{Grid2D, PhysicsParams, RefractiveMap};
use crate::mie::BeadSpec;
use crate::prox::ProxParams;
use crate::recon::{MomentumRule, ReconConfig, ReconTrace};
use crate::sim::{bead_phantom, shepp_logan, uniform_angles, DetectorSides, MeasurementSet, SimProtocol};

const FIELD_MAGIC: &[u8; 4] = b"ODTF";
const MEASUREMENT_MAGIC: &[u8; 4] = b"ODTM";
const VERSION: u32 = 1;

/// Payload of a field file, row-major with `nx` samples per row.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    Real { nx: u64, ny: u64, values: Vec<f64> },
    Complex { nx: u64, ny: u64, values: Vec<Complex64> },
}

impl FieldData {
    pub fn real_square(values: Vec<f64>) -> Result<Self> {
        let n = square_side(values.len())?;
        Ok(Self::Real {
            nx: n,
            ny: n,
            values,
        })
    }

    pub fn complex_square(values: Vec<Complex64>) -> Result<Self> {
        let n = square_side(values.len())?;
        Ok(Self::Complex {
            nx: n,
            ny: n,
            values,
        })
    }

    pub fn shape(&self) -> (u64, u64) {
        match self {
            Self::Real { nx, ny, .. } | Self::Complex { nx, ny, .. } => (*nx, *ny),
        }
    }
}

fn square_side(len: usize) -> Result<u64> {
    let n = (len as f64).sqrt().round() as usize;
    if n * n != len {
        return Err(OdtError::Format(format!("{len} samples do not form a square image")));
    }
    Ok(n as u64)
}

pub fn write_field<W: Write>(w: &mut W, field: &FieldData) -> Result<()> {
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let (nx, ny) = field.shape();
    let kind: u8 = match field {
        FieldData::Real { .. } => 0,
        FieldData::Complex { .. } => 1,
    };
    w.write_all(&[kind])?;
    w.write_all(&nx.to_le_bytes())?;
    w.write_all(&ny.to_le_bytes())?;
    match field {
        FieldData::Real { values, .. } => {
            check_count(values.len(), nx, ny)?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        FieldData::Complex { values, .. } => {
            check_count(values.len(), nx, ny)?;
            write_complex(w, values)?;
        }
    }
    Ok(())
}

fn check_count(len: usize, nx: u64, ny: u64) -> Result<()> {
    if nx.checked_mul(ny) != Some(len as u64) {
        return Err(OdtError::Format(format!("{len} values for a {nx}x{ny} field")));
    }
    Ok(())
}

pub fn read_field<R: Read>(r: &mut R) -> Result<FieldData> {
    expect_magic(r, FIELD_MAGIC)?;
    expect_version(r)?;
    let kind = read_u8(r)?;
    let nx = read_u64(r)?;
    let ny = read_u64(r)?;
    let count = nx
        .checked_mul(ny)
        .filter(|&c| c <= (1 << 32))
        .ok_or_else(|| OdtError::Format(format!("implausible field size {nx}x{ny}")))? as usize;
    let field = match kind {
        0 => {
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                values.push(read_f64(r)?);
            }
            FieldData::Real { nx, ny, values }
        }
        1 => FieldData::Complex {
            nx,
            ny,
            values: read_complex(r, count)?,
        },
        other => return Err(OdtError::Format(format!("unknown field kind {other}"))),
    };
    expect_eof(r)?;
    Ok(field)
}

pub fn write_measurements<W: Write>(w: &mut W, set: &MeasurementSet) -> Result<()> {
    set.validate()?;
    w.write_all(MEASUREMENT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let p = u32::try_from(set.len()).map_err(|_| OdtError::Format("too many records".into()))?;
    let m = u32::try_from(set.detector_count())
        .map_err(|_| OdtError::Format("too many detectors".into()))?;
    w.write_all(&p.to_le_bytes())?;
    w.write_all(&m.to_le_bytes())?;
    for k in 0..set.len() {
        w.write_all(&set.angles[k].to_le_bytes())?;
        write_complex(w, &set.y[k])?;
        write_complex(w, &set.u_in_on_gamma[k])?;
    }

    let mut meta = set.metadata.clone();
    meta.insert("source_distance".into(), set.source_distance.to_string());
    meta.insert("detector_x".into(), join(set.positions.iter().map(|p| p[0])));
    meta.insert("detector_y".into(), join(set.positions.iter().map(|p| p[1])));
    meta.insert(
        "converged".into(),
        join(set.converged.iter().map(|&c| u8::from(c))),
    );
    let mut text = String::new();
    for (k, v) in &meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(OdtError::Format(format!("metadata entry '{k}' is not a single key=value line")));
        }
        let _ = writeln!(text, "{k}={v}");
    }
    let len = u32::try_from(text.len()).map_err(|_| OdtError::Format("metadata too large".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_measurements<R: Read>(r: &mut R) -> Result<MeasurementSet> {
    expect_magic(r, MEASUREMENT_MAGIC)?;
    expect_version(r)?;
    let p = read_u32(r)? as usize;
    let m = read_u32(r)? as usize;
    let mut angles = Vec::with_capacity(p);
    let mut y = Vec::with_capacity(p);
    let mut u_in_on_gamma = Vec::with_capacity(p);
    for _ in 0..p {
        angles.push(read_f64(r)?);
        y.push(read_complex(r, m)?);
        u_in_on_gamma.push(read_complex(r, m)?);
    }
    let len = read_u32(r)? as usize;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    expect_eof(r)?;
    let text = String::from_utf8(bytes).map_err(|_| OdtError::Format("metadata is not UTF-8".into()))?;
    let mut metadata = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| OdtError::Format(format!("metadata line without '=': {line}")))?;
        metadata.insert(k.to_string(), v.to_string());
    }
    let mut take = |key: &str| {
        metadata
            .remove(key)
            .ok_or_else(|| OdtError::Format(format!("metadata lacks '{key}'")))
    };
    let source_distance = parse_value::<f64>("source_distance", &take("source_distance")?)
        .map_err(|e| OdtError::Format(e.to_string()))?;
    let xs: Vec<f64> = split_list(&take("detector_x")?)?;
    let ys: Vec<f64> = split_list(&take("detector_y")?)?;
    let flags: Vec<u8> = split_list(&take("converged")?)?;
    if xs.len() != m || ys.len() != m {
        return Err(OdtError::Format(format!(
            "{} / {} detector coordinates for {m} detectors",
            xs.len(),
            ys.len()
        )));
    }
    let set = MeasurementSet {
        angles,
        source_distance,
        positions: xs.into_iter().zip(ys).map(|(x, y)| [x, y]).collect(),
        y,
        u_in_on_gamma,
        converged: flags.into_iter().map(|f| f != 0).collect(),
        metadata,
    };
    set.validate()?;
    Ok(set)
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn split_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| OdtError::Format(format!("cannot parse list item '{t}'")))
        })
        .collect()
}

fn write_complex<W: Write>(w: &mut W, values: &[Complex64]) -> Result<()> {
    for z in values {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_complex<R: Read>(r: &mut R, count: usize) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let re = read_f64(r)?;
        let im = read_f64(r)?;
        out.push(Complex64::new(re, im));
    }
    Ok(out)
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(OdtError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn expect_version<R: Read>(r: &mut R) -> Result<()> {
    let v = read_u32(r)?;
    if v != VERSION {
        return Err(OdtError::Format(format!("unsupported version {v}")));
    }
    Ok(())
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut byte = [0u8; 1];
    match r.read(&mut byte)? {
        0 => Ok(()),
        _ => Err(OdtError::Format("trailing bytes after payload".into())),
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Min-max normalized 8-bit binary PGM; grid row 0 is written last so the
/// image appears with `y` pointing up.
pub fn write_pgm<W: Write>(w: &mut W, values: &[f64], n_side: usize) -> Result<()> {
    if values.len() != n_side * n_side {
        return Err(OdtError::DimensionMismatch {
            context: "pgm",
            expected: n_side * n_side,
            found: values.len(),
        });
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    write!(w, "P5\n{n_side} {n_side}\n255\n")?;
    let mut bytes = Vec::with_capacity(values.len());
    for row in values.chunks_exact(n_side).rev() {
        bytes.extend(row.iter().map(|v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(w: &mut W, trace: &ReconTrace) -> Result<()> {
    writeln!(w, "iteration,fidelity,tv,grad_norm,gamma,alpha,snapshot,subset")?;
    for r in &trace.records {
        let subset = r.subset.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{},{},{}",
            r.iteration,
            r.fidelity,
            r.tv,
            r.grad_norm,
            r.gamma,
            r.alpha,
            u8::from(r.snapshot),
            subset
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    SheppLogan,
    Bead,
}

impl FromStr for PhantomKind {
    type Err = OdtError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp-logan" => Ok(Self::SheppLogan),
            "bead" => Ok(Self::Bead),
            _ => Err(OdtError::InvalidInput(format!("unknown phantom '{s}'"))),
        }
    }
}

impl std::fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SheppLogan => "shepp-logan",
            Self::Bead => "bead",
        })
    }
}

/// Every tunable of the command-line pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub wavelength: f64,
    pub n_b: f64,

    pub phantom: PhantomKind,
    pub contrast: f64,
    pub bead_radius: f64,

    pub angle_count: usize,
    pub angle_min_deg: f64,
    pub angle_max_deg: f64,
    pub fine_n: usize,
    pub fine_side: f64,
    pub source_distance: f64,
    pub detector_top: bool,
    pub detector_bottom: bool,
    pub downsample_to: usize,
    pub sim_max_iters: usize,
    pub sim_tol: f64,

    pub recon_n: usize,
    pub recon_side: f64,
    pub gamma: f64,
    pub mu: f64,
    pub outer_iters: usize,
    pub subset_size: usize,
    pub forward_solver: ForwardSolver,
    pub forward_max_iters: usize,
    pub forward_tol: f64,
    pub jac_max_iters: usize,
    pub jac_tol: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub prox_max_iters: usize,
    pub prox_tol: f64,
    pub momentum: MomentumRule,
    pub seed: u64,
    pub snapshot_every: usize,

    pub mie_n: usize,
    pub mie_side: f64,
    pub mie_radius: f64,
    pub mie_contrasts: Vec<f64>,
    pub mie_eps0: f64,
    pub mie_max_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let recon = ReconConfig::default();
        let sim = SimProtocol::default();
        Self {
            wavelength: 1.0,
            n_b: 1.333,
            phantom: PhantomKind::SheppLogan,
            contrast: 0.2,
            bead_radius: 3.0,
            angle_count: sim.angles.len(),
            angle_min_deg: -60.0,
            angle_max_deg: 60.0,
            fine_n: sim.fine_grid.n_side(),
            fine_side: sim.fine_grid.side_len(),
            source_distance: sim.source_distance,
            detector_top: sim.detector_sides.top,
            detector_bottom: sim.detector_sides.bottom,
            downsample_to: sim.downsample_to,
            sim_max_iters: 2000,
            sim_tol: 1e-8,
            recon_n: 128,
            recon_side: 16.5,
            gamma: recon.gamma,
            mu: recon.mu,
            outer_iters: recon.outer_iters,
            subset_size: recon.subset_size,
            forward_solver: recon.solver,
            forward_max_iters: recon.forward_budget.max_iters,
            forward_tol: recon.forward_budget.rel_change_tol,
            jac_max_iters: recon.jac_budget.max_iters,
            jac_tol: recon.jac_budget.rel_change_tol,
            rho1: recon.prox_params.rho1,
            rho2: recon.prox_params.rho2,
            prox_max_iters: recon.prox_params.max_iters,
            prox_tol: recon.prox_params.rel_tol,
            momentum: recon.momentum,
            seed: recon.seed,
            snapshot_every: recon.snapshot_every,
            mie_n: 256,
            mie_side: 16.0,
            mie_radius: 3.0,
            mie_contrasts: vec![0.1, 0.3, 0.5, 0.7, 1.0],
            mie_eps0: 1e-2,
            mie_max_iters: 3000,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| OdtError::Config {
        key: key.to_string(),
        message: format!("cannot parse value '{raw}'"),
    })
}

fn parse_with<T>(key: &str, raw: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    f(raw).map_err(|e| OdtError::Config {
        key: key.to_string(),
        message: e.to_string(),
    })
}

fn parse_sides(raw: &str) -> Result<(bool, bool)> {
    let mut top = false;
    let mut bottom = false;
    for side in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match side {
            "top" => top = true,
            "bottom" => bottom = true,
            other => return Err(OdtError::InvalidInput(format!("unknown detector side '{other}'"))),
        }
    }
    Ok((top, bottom))
}

impl RunConfig {
    /// Parses `key=value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line.split_once('=').ok_or_else(|| OdtError::Config {
                key: line.to_string(),
                message: format!("line {} is not key=value", lineno + 1),
            })?;
            let (key, raw) = (key.trim(), raw.trim());
            if !seen.insert(key.to_string()) {
                return Err(OdtError::Config {
                    key: key.to_string(),
                    message: "given more than once".into(),
                });
            }
            c.set(key, raw)?;
        }
        Ok(c)
    }

    fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        macro_rules! p {
            ($field:ident) => {
                self.$field = parse_value(key, raw)?
            };
        }
        match key {
            "wavelength" => p!(wavelength),
            "n_b" => p!(n_b),
            "phantom" => self.phantom = parse_with(key, raw, str::parse)?,
            "contrast" => p!(contrast),
            "bead_radius" => p!(bead_radius),
            "angle_count" => p!(angle_count),
            "angle_min_deg" => p!(angle_min_deg),
            "angle_max_deg" => p!(angle_max_deg),
            "fine_n" => p!(fine_n),
            "fine_side" => p!(fine_side),
            "source_distance" => p!(source_distance),
            "detector_sides" => {
                (self.detector_top, self.detector_bottom) = parse_with(key, raw, parse_sides)?
            }
            "downsample_to" => p!(downsample_to),
            "sim_max_iters" => p!(sim_max_iters),
            "sim_tol" => p!(sim_tol),
            "recon_n" => p!(recon_n),
            "recon_side" => p!(recon_side),
            "gamma" => p!(gamma),
            "mu" => p!(mu),
            "outer_iters" => p!(outer_iters),
            "subset_size" => p!(subset_size),
            "forward_solver" => self.forward_solver = parse_with(key, raw, str::parse)?,
            "forward_max_iters" => p!(forward_max_iters),
            "forward_tol" => p!(forward_tol),
            "jac_max_iters" => p!(jac_max_iters),
            "jac_tol" => p!(jac_tol),
            "rho1" => p!(rho1),
            "rho2" => p!(rho2),
            "prox_max_iters" => p!(prox_max_iters),
            "prox_tol" => p!(prox_tol),
            "momentum" => self.momentum = parse_with(key, raw, str::parse)?,
            "seed" => p!(seed),
            "snapshot_every" => p!(snapshot_every),
            "mie_n" => p!(mie_n),
            "mie_side" => p!(mie_side),
            "mie_radius" => p!(mie_radius),
            "mie_contrasts" => self.mie_contrasts = parse_with(key, raw, split_list)?,
            "mie_eps0" => p!(mie_eps0),
            "mie_max_iters" => p!(mie_max_iters),
            _ => {
                return Err(OdtError::Config {
                    key: key.to_string(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let sides = match (self.detector_top, self.detector_bottom) {
            (true, true) => "top,bottom",
            (true, false) => "top",
            (false, true) => "bottom",
            (false, false) => "",
        };
        let entries: Vec<(&str, String)> = vec![
            ("wavelength", self.wavelength.to_string()),
            ("n_b", self.n_b.to_string()),
            ("phantom", self.phantom.to_string()),
            ("contrast", self.contrast.to_string()),
            ("bead_radius", self.bead_radius.to_string()),
            ("angle_count", self.angle_count.to_string()),
            ("angle_min_deg", self.angle_min_deg.to_string()),
            ("angle_max_deg", self.angle_max_deg.to_string()),
            ("fine_n", self.fine_n.to_string()),
            ("fine_side", self.fine_side.to_string()),
            ("source_distance", self.source_distance.to_string()),
            ("detector_sides", sides.to_string()),
            ("downsample_to", self.downsample_to.to_string()),
            ("sim_max_iters", self.sim_max_iters.to_string()),
            ("sim_tol", self.sim_tol.to_string()),
            ("recon_n", self.recon_n.to_string()),
            ("recon_side", self.recon_side.to_string()),
            ("gamma", self.gamma.to_string()),
            ("mu", self.mu.to_string()),
            ("outer_iters", self.outer_iters.to_string()),
            ("subset_size", self.subset_size.to_string()),
            ("forward_solver", self.forward_solver.to_string()),
            ("forward_max_iters", self.forward_max_iters.to_string()),
            ("forward_tol", self.forward_tol.to_string()),
            ("jac_max_iters", self.jac_max_iters.to_string()),
            ("jac_tol", self.jac_tol.to_string()),
            ("rho1", self.rho1.to_string()),
            ("rho2", self.rho2.to_string()),
            ("prox_max_iters", self.prox_max_iters.to_string()),
            ("prox_tol", self.prox_tol.to_string()),
            ("momentum", self.momentum.to_string()),
            ("seed", self.seed.to_string()),
            ("snapshot_every", self.snapshot_every.to_string()),
            ("mie_n", self.mie_n.to_string()),
            ("mie_side", self.mie_side.to_string()),
            ("mie_radius", self.mie_radius.to_string()),
            ("mie_contrasts", join(self.mie_contrasts.iter())),
            ("mie_eps0", self.mie_eps0.to_string()),
            ("mie_max_iters", self.mie_max_iters.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn physics(&self) -> Result<PhysicsParams> {
        PhysicsParams::new(self.wavelength, self.n_b)
    }

    pub fn sim_protocol(&self) -> Result<SimProtocol> {
        let protocol = SimProtocol {
            angles: uniform_angles(
                self.angle_count,
                self.angle_min_deg.to_radians(),
                self.angle_max_deg.to_radians(),
            ),
            fine_grid: Grid2D::new(self.fine_n, self.fine_side)?,
            source_distance: self.source_distance,
            detector_sides: DetectorSides {
                top: self.detector_top,
                bottom: self.detector_bottom,
            },
            downsample_to: self.downsample_to,
        };
        protocol.validate()?;
        Ok(protocol)
    }

    pub fn sim_budget(&self) -> Result<SolverBudget> {
        SolverBudget::new(self.sim_max_iters, self.sim_tol)
    }

    pub fn recon_grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.recon_n, self.recon_side)
    }

    /// The configured phantom rendered on `grid`.
    pub fn phantom_on(&self, grid: &Grid2D) -> Result<RefractiveMap> {
        let phys = self.physics()?;
        match self.phantom {
            PhantomKind::SheppLogan => shepp_logan(grid, self.contrast, &phys),
            PhantomKind::Bead => {
                let bead = BeadSpec::with_contrast(self.bead_radius, self.contrast, &phys)?;
                bead_phantom(grid, &bead, &phys)
            }
        }
    }

    pub fn recon_config(&self) -> Result<ReconConfig> {
        Ok(ReconConfig {
            gamma: self.gamma,
            mu: self.mu,
            outer_iters: self.outer_iters,
            subset_size: self.subset_size,
            solver: self.forward_solver,
            forward_budget: SolverBudget::new(self.forward_max_iters, self.forward_tol)?,
            jac_budget: SolverBudget::new(self.jac_max_iters, self.jac_tol)?,
            prox_params: ProxParams::new(1.0, self.rho1, self.rho2, self.prox_max_iters, self.prox_tol)?,
            momentum: self.momentum,
            seed: self.seed,
            snapshot_every: self.snapshot_every,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip_is_bitwise() {
        let vals: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin() * 1e-3 + f64::EPSILON).collect();
        let f = FieldData::real_square(vals).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(&buf[..4], b"ODTF");
        assert_eq!(buf.len(), 4 + 4 + 1 + 8 + 8 + 9 * 8);
        assert_eq!(read_field(&mut buf.as_slice()).unwrap(), f);

        let z: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64 / 3.0, -1.0 / (i as f64 + 1.0))).collect();
        let c = FieldData::Complex { nx: 3, ny: 2, values: z };
        let mut buf = Vec::new();
        write_field(&mut buf, &c).unwrap();
        assert_eq!(buf[8], 1);
        assert_eq!(buf.len(), 25 + 6 * 16);
        assert_eq!(read_field(&mut buf.as_slice()).unwrap(), c);

        buf.push(0);
        assert!(read_field(&mut buf.as_slice()).is_err());
        buf[0] = b'X';
        assert!(read_field(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn config_round_trip() {
        let c = RunConfig {
            gamma: 0.1 + 0.2,
            momentum: MomentumRule::Constant(0.375),
            detector_top: false,
            mie_contrasts: vec![0.1, 1.0 / 3.0],
            ..RunConfig::default()
        };
        let back = RunConfig::parse(&c.serialize()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn config_rejects_unknown_and_malformed() {
        match RunConfig::parse("gamma=0.1\nbogus_key=3\n") {
            Err(OdtError::Config { key, .. }) => assert_eq!(key, "bogus_key"),
            other => panic!("{other:?}"),
        }
        match RunConfig::parse("mu=abc") {
            Err(OdtError::Config { key, .. }) => assert_eq!(key, "mu"),
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::parse("mu=1\nmu=2").is_err());
        assert!(RunConfig::parse("just words").is_err());
        let c = RunConfig::parse("# comment\n\n  seed = 7 \n").unwrap();
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn default_config_is_consistent() {
        let c = RunConfig::default();
        c.sim_protocol().unwrap();
        let r = c.recon_config().unwrap();
        r.validate(c.angle_count).unwrap();
        assert_eq!(r.gamma, 5e-3);
        assert_eq!(r.mu, 3.3e-2);
        assert_eq!(r.outer_iters, 200);
        assert_eq!(r.forward_budget.max_iters, 120);
        assert_eq!(r.forward_budget.rel_change_tol, 1e-4);
    }

    #[test]
    fn pgm_layout() {
        let mut buf = Vec::new();
        write_pgm(&mut buf, &[0.0, 1.0, 2.0, 3.0], 2).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&buf[..header.len()], header);
        // top image row is grid row 1
        assert_eq!(&buf[header.len()..], &[170, 255, 0, 85]);
        let mut flat = Vec::new();
        write_pgm(&mut flat, &[5.0; 4], 2).unwrap();
        assert!(flat[header.len()..].iter().all(|&b| b == 0));
    }
}
