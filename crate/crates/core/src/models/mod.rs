//! The codec's network family: three variable-rate auto-encoders, the
//! deblocking filter, binarization, and the training losses.

mod autoencoder;
mod code;
mod deblock;
mod family;
pub mod losses;

pub(crate) use autoencoder::as_block_batch;
pub use autoencoder::{
    scaled, scaled_code_dims, scaled_widths, AutoEncoder, DecoderNet, EncoderNet, BASE_CODE_DIMS, BASE_WIDTHS,
    BLOCK_CHANNELS, BLOCK_LEN, BLOCK_SIZE, L2_EPS,
};
pub use code::{binarization_noise, binarization_noise_offsets, binarize, binarize_value, BlockCode, CodeMode};
pub(crate) use deblock::{crop, reflect_pad};
pub use deblock::{DeblockNet, DEFAULT_DEBLOCK_WIDTHS};
pub use family::{Manifest, NetworkFamily, DEFAULT_TARGET_PSNR, MANIFEST_FORMAT};
pub use losses::{entropy_friendly_loss, mse_loss, total_loss, DEFAULT_LAMBDA};
