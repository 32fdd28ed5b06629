//! Numerical laboratory for singular shocks in a 2x2 hyperbolic system of
//! conservation laws under self-similar viscous (Dafermos) regularization.
//!
//! The crate constructs viscous profiles whose middle state blows up as the
//! regularization parameter vanishes, verifies the geometric ingredients of
//! that construction (inner layer, outer orbits, transversal matching), and
//! measures the distributional limit: a shock that carries a growing point
//! mass in the second conserved quantity.
//!
//! Modules:
//! - [`flux`]: the flux map, characteristic speeds, Rankine-Hugoniot deficit.
//! - [`numerics`]: adaptive integration, quadrature, root finding.
//! - [`inner`]: the universal inner-layer profile and matching constants.
//! - [`outer`]: compactified outer dynamics, saddle launches, transversality.
//! - [`profile`]: full matched profiles by shooting, and the scaling sweep.
//! - [`weak`]: weak-limit measurements against test functions.
//! - [`pde`]: a finite-volume cross-check on the time-dependent system.

pub mod flux;
pub mod inner;
pub mod numerics;
pub mod outer;
pub mod profile;

#[cfg(test)]
pub(crate) mod testutil;
