//! Glauber dynamics for the homogeneous m-block mean-field Potts model.
//!
//! The crate is organised bottom-up:
//! - [`model`]: parameters, interaction matrix, Hamiltonian, heat-bath law and drift.
//! - [`theory`]: critical temperatures, macrostates, path functionals, CLT covariance.
//! - [`dynamics`]: full-configuration and lumped chain engines.
//! - [`couplings`]: optimal, semi-independent, greedy, synchronized, coordinatewise,
//!   basketwise and staged overall couplings.
//! - [`exact`]: enumerated state spaces and exact kernels for small systems.
//! - [`experiments`]: cutoff profiles, metastability, theory checks and sweeps.
//!
//! Colors and blocks are 0-based in the API and 1-based in CSV headers.

pub mod couplings;
pub mod dynamics;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod io;
pub mod model;
pub mod rng;
pub mod theory;

pub use error::{PottsError, Result};
pub use model::{Configuration, CountMatrix, InteractionMatrix, ModelParams, ProportionMatrix};
