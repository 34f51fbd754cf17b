//! Finite-difference solver and diagnostics for a stochastic compressible
//! Navier-Stokes system with degenerate viscosity on a periodic box.

pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod integrator;
pub mod snapshot;
pub mod verify;

pub use error::{Error, Result};
