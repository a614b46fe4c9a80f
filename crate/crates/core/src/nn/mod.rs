//! Minimal reverse-mode tensor engine: exactly the layers, losses, and
//! optimizer the codec networks use.

mod adam;
pub mod checkpoint;
pub(crate) mod conv;
pub mod gradcheck;
pub mod layers;
mod param;
mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointEntry, TensorData};
pub use layers::{Conv2d, Deconv2d, Prelu};
pub use param::{prelu_gain, uniform_fan_in, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tape::{sigmoid, Bindings, Gradients, Tape, Var};
pub use tensor::Tensor;
