//! Distortion functionals, Ball-class diagnostics and variational p-capacities
//! for Sobolev mappings.

pub mod capacity;
pub mod cli;
pub mod config;
pub mod distortion;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod linalg;
pub mod mapping;
pub mod report;
pub mod verify;

pub use error::{LabError, Result};
pub use exec::Execution;
