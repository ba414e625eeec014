//! Numerical toolkit for the asymptotics of solutions to Schrödinger
//! equations with singular homogeneous electromagnetic potentials.

pub mod error;
pub mod quadrature;
pub mod sphere;
pub mod angular_spectrum;
pub mod modal_field;
pub mod frequency;
pub mod asymptotics;
pub mod inequalities;
pub mod scenario;

pub use error::{Error, Result};
