//! Suboptimal consensus control of kinetic opinion dynamics.
//!
//! The crate builds state-dependent Riccati (SDRE) feedback for a two-agent
//! Sznajd interaction, distills it into gradient-augmented neural surrogates
//! and drives a Boltzmann-type Monte Carlo simulation of a large population
//! with the resulting binary controls.

pub mod dataset;
pub mod eig;
pub mod error;
pub mod io;
pub mod kinetic;
pub mod linalg;
pub mod model;
pub mod neural;
pub mod pmp;
pub mod riccati;
pub mod sdre;

pub use error::{Error, Result};
pub use linalg::{Mat2, Vec2};
pub use model::{BinaryState, ModelConfig, TransformedState};
