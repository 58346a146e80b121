//! Tumor-immune dynamics under combined immuno-, chemo- and radiotherapy.
//!
//! - [`model`]: parameters, scaling and the right-hand side in both frames.
//! - [`integrate`]: fixed-step and adaptive integration, trajectories, CSV.
//! - [`analysis`]: treatment-free nullclines, equilibria, stability, Dulac check.
//! - [`control`]: objectives, Hamiltonian and costates, direct and sweep solvers,
//!   and a verifier for the first-order necessary conditions.
//! - [`cli`]: the `tumorctl` command-line front end.

pub mod analysis;
pub mod cli;
pub mod control;
pub mod error;
pub mod integrate;
pub mod keyvalue;
pub mod model;

pub use error::{Error, Result};
