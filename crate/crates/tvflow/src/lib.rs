//! Simulation, Monte Carlo verification and file formats for the stochastic
//! total variation flow, on top of `tvflow-core`.

pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod mc;

pub use error::{Error, Result};
