//! Penalty-method Navier–Stokes solver with elementwise adaptive penalty parameters.
//!
//! Velocity is approximated in continuous P2 on triangles. Incompressibility is enforced by
//! a grad-div penalty whose strength varies per element and is retuned every step from a
//! local divergence estimate. Pressure is recovered afterwards, elementwise.

pub mod assembly;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod penalty;
pub mod problems;
pub mod report;
pub mod sparse;
pub mod stepper;

pub use error::{FemError, MeshError, RunError, SolveError};
