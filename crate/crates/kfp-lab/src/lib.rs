//! Numerical laboratory for the kinetic Fokker-Planck equation in a bounded
//! domain with Maxwell (specular + diffusive) reflection at the boundary.
//!
//! The crate builds the discrete generator (collision + transport + reflection),
//! integrates the forward and dual semigroups, and measures the structural
//! properties of the dynamics: conservation laws, weighted-norm growth and
//! contraction, boundary inequalities, hypocoercivity certificates, short-time
//! smoothing against the exact free-space Gaussian, and spectral-splitting decay.
//!
//! Start from the runnable programs in `examples/`; each one exercises a major
//! capability end to end.

pub mod error;
pub mod evolution;
pub mod functionals;
pub mod geometry;
pub mod grid;
pub mod hypocoercivity;
pub mod linalg;
pub mod operators;
pub mod reference;
pub mod sparse;
pub mod weights;

pub use error::{Error, Result};
