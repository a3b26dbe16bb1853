use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::features::FeatureExtractor;

use super::flow::AppearanceFlow;

/// Loss weights: `perceptual` is λ1, `smooth_first` λ2 and
/// `smooth_second` λ3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpLossWeights {
    pub perceptual: f64,
    pub smooth_first: f64,
    pub smooth_second: f64,
}

impl Default for WarpLossWeights {
    fn default() -> Self {
        Self {
            perceptual: 0.2,
            smooth_first: 0.01,
            smooth_second: 6.0,
        }
    }
}

impl WarpLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("perceptual", self.perceptual),
            ("smooth_first", self.smooth_first),
            ("smooth_second", self.smooth_second),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return arg_err(format!(
                    "loss weight `{name}` must be a non-negative number, got {v}"
                ));
            }
        }
        Ok(())
    }
}

/// Every term of the warp objective. `total` is differentiable.
#[derive(Debug, Clone)]
pub struct WarpLoss {
    pub total: Tensor,
    pub l1: Tensor,
    pub perceptual: Tensor,
    pub smooth_first: Tensor,
    pub smooth_second: Tensor,
}

impl WarpLoss {
    /// Scalar values `(total, l1, perceptual, smooth_first, smooth_second)`.
    pub fn values(&self) -> Result<[f64; 5]> {
        let s = |t: &Tensor| -> Result<f64> {
            Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
        };
        Ok([
            s(&self.total)?,
            s(&self.l1)?,
            s(&self.perceptual)?,
            s(&self.smooth_first)?,
            s(&self.smooth_second)?,
        ])
    }
}

/// `|x|` with a zero subgradient at 0. Tensor `abs` backpropagates +1
/// there, which pushes a flat flow in one direction.
fn abs0(x: &Tensor) -> Result<Tensor> {
    Ok(x.mul(&x.sign()?.detach())?)
}

/// Mean absolute first differences of a flow along both axes.
pub fn smoothness_first(flow: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = flow.dims4()?;
    let mut terms = Vec::new();
    if w > 1 {
        let dx = (flow.narrow(3, 1, w - 1)? - flow.narrow(3, 0, w - 1)?)?;
        terms.push(abs0(&dx)?.mean_all()?);
    }
    if h > 1 {
        let dy = (flow.narrow(2, 1, h - 1)? - flow.narrow(2, 0, h - 1)?)?;
        terms.push(abs0(&dy)?.mean_all()?);
    }
    sum_scalars(terms, flow)
}

/// Mean absolute second differences of a flow along both axes.
pub fn smoothness_second(flow: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = flow.dims4()?;
    let mut terms = Vec::new();
    if w > 2 {
        let d = ((flow.narrow(3, 2, w - 2)? + flow.narrow(3, 0, w - 2)?)?
            - (flow.narrow(3, 1, w - 2)? * 2.0)?)?;
        terms.push(abs0(&d)?.mean_all()?);
    }
    if h > 2 {
        let d = ((flow.narrow(2, 2, h - 2)? + flow.narrow(2, 0, h - 2)?)?
            - (flow.narrow(2, 1, h - 2)? * 2.0)?)?;
        terms.push(abs0(&d)?.mean_all()?);
    }
    sum_scalars(terms, flow)
}

/// Flow in half-extent units: a displacement of `w / 2` pixels along x
/// (`h / 2` along y) becomes 1, at every pyramid level.
fn grid_units(flow: &AppearanceFlow) -> Result<Tensor> {
    let (h, w) = flow.hw();
    let t = flow.tensor();
    let dx = (t.narrow(1, 0, 1)? * (2.0 / w as f64))?;
    let dy = (t.narrow(1, 1, 1)? * (2.0 / h as f64))?;
    Ok(Tensor::cat(&[dx, dy], 1)?)
}

fn sum_scalars(terms: Vec<Tensor>, like: &Tensor) -> Result<Tensor> {
    let mut acc = Tensor::zeros((), like.dtype(), like.device())?;
    for t in terms {
        acc = (acc + t)?;
    }
    Ok(acc)
}

/// `L1 + λ1 perceptual + λ2 first-order smoothness + λ3 second-order smoothness`.
///
/// With a `(B, 1, H, W)` `region`, L1 is the mean over the region's pixels
/// only; otherwise over the whole image.
/// The perceptual term is the mean absolute difference of extractor
/// features, averaged over layers. Smoothness terms are taken on each flow
/// of `flows` in half-extent units and summed.
pub fn warp_training_loss(
    warped: &Tensor,
    target: &Tensor,
    region: Option<&Tensor>,
    flows: &[AppearanceFlow],
    weights: &WarpLossWeights,
    extractor: &dyn FeatureExtractor,
) -> Result<WarpLoss> {
    weights.validate()?;
    if warped.dims() != target.dims() {
        return dim_err(format!(
            "warped {:?} vs target {:?}",
            warped.dims(),
            target.dims()
        ));
    }
    let diff = abs0(&(warped - target)?)?;
    let l1 = match region {
        None => diff.mean_all()?,
        Some(m) => {
            let (b, c, h, w) = warped.dims4()?;
            if m.dims() != [b, 1, h, w] {
                return dim_err(format!(
                    "region {:?} vs images {:?}",
                    m.dims(),
                    warped.dims()
                ));
            }
            let m = m.to_dtype(warped.dtype())?;
            let area = m
                .sum_all()?
                .to_dtype(DType::F64)?
                .to_scalar::<f64>()?
                .max(1.0)
                * c as f64;
            (diff.broadcast_mul(&m)?.sum_all()? / area)?
        }
    };
    let fa = extractor.feature_maps(warped)?;
    let fb = extractor.feature_maps(target)?;
    let mut perceptual = Tensor::zeros((), warped.dtype(), warped.device())?;
    for (a, b) in fa.iter().zip(&fb) {
        perceptual = (perceptual + abs0(&(a - b)?)?.mean_all()?.to_dtype(warped.dtype())?)?;
    }
    perceptual = (perceptual / fa.len().max(1) as f64)?;
    let mut s1 = Tensor::zeros((), warped.dtype(), warped.device())?;
    let mut s2 = Tensor::zeros((), warped.dtype(), warped.device())?;
    for f in flows {
        let t = grid_units(f)?.to_dtype(warped.dtype())?;
        s1 = (s1 + smoothness_first(&t)?)?;
        s2 = (s2 + smoothness_second(&t)?)?;
    }
    let total = (((&l1 + (&perceptual * weights.perceptual)?)? + (&s1 * weights.smooth_first)?)?
        + (&s2 * weights.smooth_second)?)?;
    Ok(WarpLoss {
        total,
        l1,
        perceptual,
        smooth_first: s1,
        smooth_second: s2,
    })
}
