//! Virtual try-on pipeline: appearance-flow garment warping with deformable
//! convolutions, structured garment semantics and dataset construction,
//! dual-conditioned latent diffusion, and the evaluation metrics used to
//! compare try-on results.

pub mod error;
pub mod features;
pub mod generation;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod semantics;
pub mod tensor;
pub mod warp;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, ParseMap, ValueRange};
