//! Minimal dense-tensor substrate: `f64` tensors, a reverse-mode
//! differentiation tape with stop-gradient, dense layers, an Adam optimizer
//! and a checkpoint container.
//!
//! Broadcasting is limited to repeating a single row over the leading batch
//! axis, which keeps every gradient rule a plain row reduction.

pub mod checkpoint;
mod error;
pub mod nn;
pub mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{NumError, Result};
pub use nn::Linear;
pub use optim::{AdamConfig, OptimState};
pub use params::{uniform_fan_in, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{matmul, Tensor};
