//! Dense `f64` tensors, a reverse-mode tape, Adam, and parameter checkpoints.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use layers::{Conv2d, Linear, Mlp};
pub use params::{ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{order_free_sum, sigmoid, Activation, ConvGeometry, Tensor};
