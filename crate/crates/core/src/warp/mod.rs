//! Garment warping: multi-scale feature pyramids, cost volumes, deformable
//! flow-residual prediction and cascaded flow composition.

mod cascade;
mod correlation;
mod deform;
mod flow;
mod loss;
mod pyramid;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::semantics::PARSE_CLASSES;

pub use cascade::{run_cascade, CascadeOutput, FlowStage, PersonCondition, WarpNetwork};
pub use correlation::{local_correlation, CorrelationVolume};
pub use deform::{deform_conv, DeformConv2d, DeformableKernel};
pub use flow::{
    compose_flow, resize_flow, upsample_flow, warp_image, warp_tensor, AppearanceFlow, WarpMode,
};
pub use loss::{
    smoothness_first, smoothness_second, warp_training_loss, WarpLoss, WarpLossWeights,
};
pub use pyramid::{
    extract_pyramid, fuse_features, person_input, pyramid_shapes, FeaturePyramid, FusionHead,
    PyramidExtractor,
};

/// Garment stream input: RGB.
pub const GARMENT_CHANNELS: usize = 3;
/// Person stream input: agnostic RGB, dense-pose RGB, one-hot parse.
pub const PERSON_CHANNELS: usize = 3 + 3 + PARSE_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarpConfig {
    /// Channels per pyramid level, finest first; its length is the pyramid depth.
    pub level_channels: Vec<usize>,
    /// Number of cascaded flow stages (at most the pyramid depth).
    pub cascade_depth: usize,
    pub fuse_alpha: f64,
    pub fuse_beta: f64,
    pub corr_radius: usize,
    /// Hidden width of each flow head.
    pub head_channels: usize,
    /// Deformable refinement inside the feature pyramids.
    pub mre_deformable: bool,
    /// Deformable convolution inside the flow heads.
    pub dfen_deformable: bool,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            level_channels: vec![16, 32, 64, 64, 64],
            cascade_depth: 5,
            fuse_alpha: 1.0,
            fuse_beta: 1.0,
            corr_radius: 4,
            head_channels: 32,
            mre_deformable: true,
            dfen_deformable: true,
        }
    }
}

impl WarpConfig {
    pub fn validate(&self) -> Result<()> {
        let depth = self.level_channels.len();
        if depth < 2 {
            return arg_err(format!("pyramid depth must be at least 2, got {depth}"));
        }
        if self.cascade_depth == 0 || self.cascade_depth > depth {
            return arg_err(format!(
                "cascade depth {} must lie in 1..={depth} (pyramid depth)",
                self.cascade_depth
            ));
        }
        if self.level_channels.contains(&0) || self.head_channels == 0 {
            return arg_err("channel widths must be positive");
        }
        if !self.fuse_alpha.is_finite() || !self.fuse_beta.is_finite() {
            return arg_err("fusion weights must be finite");
        }
        Ok(())
    }
}
