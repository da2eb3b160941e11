//! Free energy of the Potts spin glass: finite-size simulation, the matrix-path
//! Parisi functional, Ruelle cascades and overlap diagnostics.

pub mod cascade;
pub mod diagnostics;
pub mod error;
pub mod functional;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod paths;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use error::{Error, GramViolation, Result};
