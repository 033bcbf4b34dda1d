//! Simulation engine for the intracavity Kerr nonlinear coupler.
//!
//! * [`model`]: parameters and frequency grids
//! * [`steady`]: classical steady states and bistability
//! * [`fluct`]: linearised drift/diffusion and the intracavity spectral matrix
//! * [`criteria`]: output quadrature covariances and entanglement measures
//! * [`sde`]: positive-P stochastic integration of the full equations

pub mod criteria;
pub mod fluct;
pub mod model;
pub mod sde;
pub mod steady;

pub use model::{CouplerParams, FrequencyGrid};
