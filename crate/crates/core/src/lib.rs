//! Simulation and estimation for quantum nondemolition measurement
//! sequences: spectral models, probe families, trajectories, estimators,
//! and an experiment harness.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod interp;
pub mod linalg;
pub mod probe;
pub mod quadrature;
pub mod spectral;
pub mod state;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
