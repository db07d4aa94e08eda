//! Minimal neural-network toolkit: tensors, a reverse-mode tape, Adam and
//! finite-difference gradient checks.

pub mod adam;
pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use params::{Grads, Init, ParamId, Params, Tensor};
pub use tape::{Tape, Var};
