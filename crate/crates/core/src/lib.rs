//! Solver core for a coupled thermo-visco-elastic system with vectorial phase
//! evolution, solute diffusion, rate-independent unidirectional damage and
//! heat transfer, discretized in time by a four-step semi-implicit
//! (fractional-step) scheme and in space by P1 finite elements on intervals
//! and triangulated rectangles.
//!
//! The time step advances the state through four staggered problems:
//! 1. mechanics + phase: one convex minimization in (u, χ);
//! 2. diffusion: a convex dual minimization in the chemical potential μ with
//!    the concentration recovered nodewise from the conjugate chemical energy;
//! 3. damage: a box-constrained minimization in d over 0 ≤ d ≤ d_prev;
//! 4. heat: a semilinear enthalpy equation for (w, θ) whose right-hand side
//!    collects the dissipation of the first three steps.
//!
//! Every structural property of the scheme that can be checked at desk scale
//! (energy bookkeeping, conservation, positivity, monotonicity,
//! semi-stability) has a corresponding diagnostic in [`diagnostics`].

pub mod assembly;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod materials;
pub mod minimizers;
pub mod stepper;
pub mod tensor;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{Result, SolverError};
pub use geometry::{BoundaryRegion, Mesh, NodalField};
pub use tensor::{Coeff2, Sym2};
