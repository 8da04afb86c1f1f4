//! Two-dimensional optical diffraction tomography.
//!
//! The forward model is the discretized Lippmann-Schwinger equation
//! `u = u_in + G (f ⊙ u)` solved matrix-free with FFT convolutions. The
//! inverse problem minimizes a detector-space least-squares data term under
//! total-variation and nonnegativity constraints with an accelerated
//! proximal-gradient loop, using a closed-form Jacobian for the gradient.

pub mod bessel;
pub mod error;
pub mod fft;
pub mod forward;
pub mod gradient;
pub mod greens;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod linop;
pub mod mie;
pub mod prox;
pub mod recon;
pub mod sim;

pub use error::{OdtError, Result};
pub use forward::{ForwardSolver, PlaneWave, SolverBudget};
pub use gradient::{GradientSettings, IlluminationRecord};
pub use greens::{DetectorGeometry, DetectorOperator, GreenKernel};
pub use grid::{ComplexField, Grid2D, PhysicsParams, RefractiveMap, ScatteringPotential};
pub use mie::BeadSpec;
pub use recon::{MomentumRule, ReconConfig, ReconProblem};
pub use sim::{MeasurementSet, SimProtocol};
