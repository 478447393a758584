//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! Values live on a [`Tape`]; every operation appends a node and returns a
//! [`Var`] handle. Two backward passes are available:
//!
//! - [`Tape::backward`] propagates plain numeric adjoints from a scalar root.
//! - [`Tape::grad`] records the backward pass itself as tape operations, so
//!   the returned gradients can be differentiated again. Physics models use
//!   this to turn a learned potential into a force and still train through it.
//!
//! The [`mlp`] module builds fully connected networks on top of the tape and
//! [`adam`] holds the optimiser.

pub mod adam;
mod error;
pub mod mlp;
pub mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use error::AutodiffError;
pub use mlp::{forward_mlp, grad_wrt_input, HiddenActivation, Mlp, MlpSpec, OutputActivation};
pub use params::ParamStore;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
