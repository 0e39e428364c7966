//! Recurrent maze-navigation agents trained by natural evolution strategies,
//! plus the tooling used to take them apart: hybrid dynamical-systems probes,
//! ridge-image behaviour metrics, PCA/CCA alignment and hidden-state
//! interventions.

pub mod analysis;
pub mod error;
pub mod evolution;
pub mod fixtures;
pub mod harness;
pub mod hds;
pub mod intervention;
pub mod maze;
pub mod policy;
pub mod ridge;
pub mod rng;
pub mod stats;

pub use error::{Error, ErrorClass, Result};
