//! Gaussian-beam quasimodes for a Bloch electron in a weak constant
//! magnetic field.

pub mod bloch;
pub mod config;
pub mod error;
pub mod frame;
pub mod harness;
pub mod ode;
pub mod orbit;
pub mod phases;
pub mod pipeline;
pub mod quasimode;
pub mod spectral;

pub use error::{Error, Result};
