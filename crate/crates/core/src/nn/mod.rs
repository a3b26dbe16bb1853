//! Tensor building blocks shared by the warping and generation networks.

mod layers;
mod resize;
mod sampling;

pub use layers::{
    leaky_relu, timestep_embedding, Attention, Conv2d, GroupNorm, LayerInit, LayerNorm, Linear,
    TransformerBlock,
};
pub use resize::{area_downsample, interpolation_matrix, resize_bilinear};
pub use sampling::{sample_taps, warp_bilinear, warp_nearest};
