//! Simulation and verification library for barotropic quantum Navier-Stokes
//! flow with density-dependent viscosity and a singular cold pressure on the
//! periodic torus.

pub mod error;
pub mod experiments;
pub mod fields;
pub mod functionals;
pub mod grid;
pub mod integrator;
pub mod io;
pub mod par;
pub mod physics;

pub use error::{QnsError, Result};
