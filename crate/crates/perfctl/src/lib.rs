//! Performative control of linear dynamical systems under disturbance-action
//! policies whose deployment shifts the distribution of the state-transition
//! matrices.

pub mod analysis;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod instance;
pub mod linalg;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
