//! Structure-preserving finite elements for time-domain Maxwell's equations.
//!
//! The crate discretizes the first-order Maxwell system
//!
//! ```text
//! eps dE/dt + sigma E - curl(mu^-1 B) = f,      dB/dt + curl E = 0,
//! ```
//!
//! with perfectly conducting boundary conditions on tetrahedral meshes, using
//! the lowest-order Nedelec (edge) space for `E` and the lowest-order
//! Raviart-Thomas (face) space for `B`. The pairing forms an exact discrete
//! de Rham sequence whose coordinate maps are integer incidence matrices, so
//! the discrete Gauss law `div B_h = 0` is preserved structurally rather than
//! approximately, and the trapezoidal time stepper reproduces the energy
//! identity of the continuous problem at the discrete level.
//!
//! Module layout:
//! - [`mesh`]: tetrahedral meshes, structured box generation, text format I/O
//! - [`sparse`]: CSR matrices, CG, and the Schur-complement saddle-point solve
//! - [`derham`]: P1/N0/RT0/Q0 spaces, incidence operators, Whitney bases
//! - [`assembly`]: quadrature and assembly of mass/coupling matrices and loads
//! - [`projections`]: L2, Riesz, and divergence-constrained projections
//! - [`semidiscrete`]: the Galerkin ODE system, steppers, invariant monitors
//! - [`experiments`]: manufactured cavity solution, refinement studies

pub mod assembly;
pub mod derham;
pub mod experiments;
pub mod geometry;
pub mod mesh;
pub mod projections;
pub mod semidiscrete;
pub mod sparse;
