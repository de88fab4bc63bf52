//! Twin-experiment data assimilation for airborne contaminant dispersion.
//!
//! An ensemble transform Kalman filter fuses sparse drone readings with an
//! implicit advection-diffusion model driven by a steady incompressible wind
//! field over an obstacle-masked grid. The drone path is chosen online by a
//! sector-based exploration/exploitation policy.

pub mod enkf;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod harness;
pub mod rng;
pub mod routing;
pub mod sparse;
pub mod transport;
pub mod windfield;

pub use error::{Error, Result};
pub use exec::Execution;
