//! Contact dynamics with the CD-Lagrange integrator: scenes and data,
//! time stepping, learnable models and their training loop.

mod error;
pub mod integrators;
pub mod mechanics;
pub mod models;
pub mod training;

pub use error::{Component, CoreError, Result};
