//! Latent diffusion conditioned on a geometric stack and a fused
//! text/visual embedding.
//!
//! The denoiser input is `[z, e_warp, e_agnostic, mask, pose]` (16 channels
//! at `H/8 x W/8`); the text context is `[pseudo-words; caption tokens]`
//! after the text encoder, read through cross-attention.

mod condition;
mod denoiser;
mod diffusion;
mod latent;
mod model;
mod pseudo;
mod text;

use serde::{Deserialize, Serialize};

pub use condition::*;
pub use denoiser::*;
pub use diffusion::*;
pub use latent::*;
pub use model::*;
pub use pseudo::*;
pub use text::*;

use crate::error::{arg_err, Result};

/// Rows produced by the pseudo-word mapper.
pub const PSEUDO_WORDS: usize = 16;

/// Which caption reaches the text pathway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMode {
    /// The null embedding every step.
    None,
    /// A fixed generic prompt.
    Raw,
    /// The structured attribute caption.
    Structured,
}

impl TextMode {
    pub const ALL: [TextMode; 3] = [TextMode::None, TextMode::Raw, TextMode::Structured];

    pub fn as_str(self) -> &'static str {
        match self {
            TextMode::None => "none",
            TextMode::Raw => "raw",
            TextMode::Structured => "structured",
        }
    }
}

impl std::fmt::Display for TextMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TextMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        TextMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .map_or_else(|| arg_err(format!("unknown text mode `{s}`")), Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub d_text: usize,
    pub max_text_len: usize,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub unet: UNetConfig,
    /// Visual encoder input size `(H, W)` and patch side.
    pub visual_hw: [usize; 2],
    pub visual_patch: usize,
    pub visual_dim: usize,
    pub visual_blocks: usize,
    pub heads: usize,
    pub text_blocks: usize,
    pub text_mode: TextMode,
    /// The warped garment latent fills the `e_warp` slot of the stack.
    pub warp_in_condition: bool,
    /// The visual encoder reads the warped garment instead of the in-shop one.
    pub warp_in_visual: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            d_text: 64,
            max_text_len: 32,
            timesteps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
            unet: UNetConfig::default(),
            visual_hw: [64, 48],
            visual_patch: 8,
            visual_dim: 64,
            visual_blocks: 2,
            heads: 4,
            text_blocks: 2,
            text_mode: TextMode::Structured,
            warp_in_condition: true,
            warp_in_visual: false,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_text", self.d_text),
            ("max_text_len", self.max_text_len),
            ("timesteps", self.timesteps),
            ("visual_patch", self.visual_patch),
            ("visual_dim", self.visual_dim),
            ("heads", self.heads),
            ("unet.heads", self.unet.heads),
            ("unet.groups", self.unet.groups),
            ("unet.time_dim", self.unet.time_dim),
            ("unet.channels[0]", self.unet.channels[0]),
            ("unet.channels[1]", self.unet.channels[1]),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return arg_err(format!("generation.{k} must be positive"));
        }
        if self.d_text % self.heads != 0 || self.visual_dim % self.heads != 0 {
            return arg_err("d_text and visual_dim must be divisible by heads");
        }
        for c in self.unet.channels {
            if c % self.unet.heads != 0 {
                return arg_err("unet channels must be divisible by unet.heads");
            }
        }
        if self
            .visual_hw
            .iter()
            .any(|s| *s == 0 || s % self.visual_patch != 0)
        {
            return arg_err("visual_hw must be positive multiples of visual_patch");
        }
        DiffusionSchedule::linear(self.timesteps, self.beta_start, self.beta_end)?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }
}
