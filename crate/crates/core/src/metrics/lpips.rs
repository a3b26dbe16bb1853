use candle_core::{DType, Tensor};

use crate::error::{dim_err, Result};
use crate::features::FeatureExtractor;
use crate::tensor::{ImageTensor, ValueRange};

const NORM_EPS: f64 = 1e-10;

/// Distance between two lists of `(1, c, h, w)` maps: per layer, unit
/// normalize every position's channel vector, take the squared L2
/// difference and average over positions; then average over layers.
pub fn lpips_from_maps(a: &[Tensor], b: &[Tensor]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return dim_err(format!("{} vs {} feature maps", a.len(), b.len()));
    }
    let mut total = 0.0;
    for (fa, fb) in a.iter().zip(b) {
        if fa.dims() != fb.dims() {
            return dim_err(format!("feature maps {:?} vs {:?}", fa.dims(), fb.dims()));
        }
        let (n, c, h, w) = fa.dims4()?;
        let va = fa.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let vb = fb.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let plane = h * w;
        let mut layer = 0.0;
        for item in 0..n {
            let base = item * c * plane;
            for p in 0..plane {
                let at = |v: &[f64], ch: usize| v[base + ch * plane + p];
                let na = (0..c).map(|ch| at(&va, ch).powi(2)).sum::<f64>().sqrt() + NORM_EPS;
                let nb = (0..c).map(|ch| at(&vb, ch).powi(2)).sum::<f64>().sqrt() + NORM_EPS;
                layer += (0..c)
                    .map(|ch| (at(&va, ch) / na - at(&vb, ch) / nb).powi(2))
                    .sum::<f64>();
            }
        }
        total += layer / (n * plane) as f64;
    }
    Ok(total / a.len() as f64)
}

/// Perceptual distance with a fixed extractor; images are fed in `[-1, 1]`.
pub fn lpips_distance(
    x: &ImageTensor,
    y: &ImageTensor,
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    if x.tensor().dims() != y.tensor().dims() {
        return dim_err(format!(
            "lpips of {:?} and {:?}",
            x.tensor().dims(),
            y.tensor().dims()
        ));
    }
    let fa = extractor.feature_maps(&x.with_range(ValueRange::Signed)?.batched()?)?;
    let fb = extractor.feature_maps(&y.with_range(ValueRange::Signed)?.batched()?)?;
    lpips_from_maps(&fa, &fb)
}
