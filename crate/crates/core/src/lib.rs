pub mod annotate;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod hash;
pub mod nn;
pub mod policy;
pub mod reward;
pub mod rl;
pub mod seed;
pub mod segment;
pub mod vocab;
pub mod world;

pub use error::{Error, Result};
