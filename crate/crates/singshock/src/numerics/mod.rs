//! Shared numerical kernels: adaptive embedded Runge-Kutta integration with
//! dense output and event detection, adaptive quadrature, and damped Newton
//! root finding. The kernels are dependency-free; linear solves inside the
//! Newton iteration use nalgebra.

mod integrate;
mod quad;
mod root;

pub use integrate::{
    integrate, Direction, EventRecord, EventSpec, IntegrateError, IntegratorConfig, Trajectory,
};
pub use quad::{quad, QuadError};
pub use root::{solve_root, RootConfig, RootError};
