//! Image-quality metrics: SSIM, a feature-space perceptual distance,
//! Frechet and kernel distances between feature distributions, and the
//! paired/unpaired evaluation protocol built on them.

mod distribution;
mod lpips;
mod report;
mod ssim;

pub use distribution::{
    extract_features, fid, kid, mmd2_unbiased, FeatureSet, KidOptions, KidValue,
};
pub use lpips::{lpips_distance, lpips_from_maps};
pub use report::{
    evaluate_pairs, evaluate_pose_robustness, export_references, metric_table, output_name,
    pose_robustness, EvalMode, MetricDeltas, MetricReport, PoseScope, RobustnessReport,
    GEN_PROVENANCE_FILE, KID_TEXT_SCALE,
};
pub use ssim::{gaussian_window, ssim, ssim_planes, ssim_with, SsimParams};
