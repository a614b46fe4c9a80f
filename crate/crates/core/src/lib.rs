//! Block-based variable-rate learned image codec.
//!
//! Images are cut into 32x32 blocks; each block is coded by the cheapest of
//! three auto-encoders that reaches a target PSNR, optionally after
//! fine-tuning a per-block copy of the encoder. Binary block-codes are
//! concatenated, XOR-difference coded and arithmetic coded into a `.ntc`
//! container together with a per-block network indicator.

pub mod bitstream;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use models::{AutoEncoder, BlockCode, NetworkFamily};
pub use nn::{Tape, Tensor};
