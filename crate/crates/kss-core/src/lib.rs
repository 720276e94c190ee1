//! Random Kostlan-Shub-Smale polynomial systems.
//!
//! The crate samples KSS systems, counts their real roots, evaluates the
//! Kac-Rice and Wiener-chaos expressions for the variance of the root count,
//! builds the hyperspherical-rectangle partition of the sphere used in the
//! CLT argument and examines the local Bargmann-Fock limit.

pub mod chaos;
pub mod covariance;
pub mod error;
pub mod experiment;
pub mod kac_rice;
pub mod kss_model;
pub mod local_field;
pub mod partition;
pub mod quadrature;
pub mod rng;
pub mod roots;
pub mod stats;

pub use error::{KssError, Result};
