use candle_core::{DType, Module, Tensor};

use crate::error::{dim_err, Result};
use crate::nn::{leaky_relu, resize_bilinear, Conv2d, LayerInit};
use crate::params::Scope;
use crate::tensor::{ImageTensor, ParseMap};

use super::deform::DeformConv2d;
use super::WarpConfig;

/// Multi-level features, finest first. Level `l + 1` is `ceil(h_l / 2) x ceil(w_l / 2)`.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        if levels.len() < 2 {
            return dim_err(format!(
                "a pyramid needs at least 2 levels, got {}",
                levels.len()
            ));
        }
        for pair in levels.windows(2) {
            let (_, _, h0, w0) = pair[0].dims4()?;
            let (_, _, h1, w1) = pair[1].dims4()?;
            if h1 != h0.div_ceil(2) || w1 != w0.div_ceil(2) {
                return dim_err(format!("level {h0}x{w0} followed by {h1}x{w1}"));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &Tensor {
        &self.levels[l]
    }

    /// `(h, w)` of every level.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.levels
            .iter()
            .map(|t| {
                let d = t.dims();
                (d[2], d[3])
            })
            .collect()
    }
}

/// Spatial sizes the extractor produces for an `h x w` input.
pub fn pyramid_shapes(h: usize, w: usize, depth: usize) -> Vec<(usize, usize)> {
    let mut out = vec![(h, w)];
    for _ in 1..depth {
        let (ph, pw) = *out.last().expect("non-empty");
        out.push((ph.div_ceil(2), pw.div_ceil(2)));
    }
    out
}

/// Strided convolution pyramid. Level 0 keeps full resolution; each further
/// level halves it. Optionally refines every level with a residual
/// deformable convolution.
#[derive(Debug, Clone)]
pub struct PyramidExtractor {
    convs: Vec<Conv2d>,
    refine: Vec<Option<DeformConv2d>>,
    in_channels: usize,
}

impl PyramidExtractor {
    pub fn new(vs: &Scope, in_channels: usize, config: &WarpConfig) -> Result<Self> {
        let mut convs = Vec::new();
        let mut refine = Vec::new();
        let mut c_prev = in_channels;
        for (l, &c) in config.level_channels.iter().enumerate() {
            let stride = if l == 0 { 1 } else { 2 };
            convs.push(Conv2d::new(
                &vs.pp(format!("level{l}")),
                c_prev,
                c,
                3,
                stride,
                LayerInit::Default,
            )?);
            refine.push(if config.mre_deformable {
                Some(DeformConv2d::new(&vs.pp(format!("refine{l}")), c, c, c, 3)?)
            } else {
                None
            });
            c_prev = c;
        }
        Ok(Self {
            convs,
            refine,
            in_channels,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn extract(&self, x: &Tensor) -> Result<FeaturePyramid> {
        let c = x.dim(1)?;
        if c != self.in_channels {
            return dim_err(format!(
                "extractor expects {} channels, got {c}",
                self.in_channels
            ));
        }
        let mut levels = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for (conv, refine) in self.convs.iter().zip(&self.refine) {
            h = leaky_relu(&conv.forward(&h)?)?;
            if let Some(d) = refine {
                h = (&h + leaky_relu(&d.forward(&h, &h)?)?)?;
            }
            levels.push(h.clone());
        }
        FeaturePyramid::new(levels)
    }
}

/// Person-stream input: image, dense-pose rendering, and one-hot parse,
/// concatenated along channels into a single-item batch.
pub fn person_input(
    image: &ImageTensor,
    dense_pose: &ImageTensor,
    parse: &ParseMap,
    dtype: DType,
) -> Result<Tensor> {
    if image.hw() != dense_pose.hw() || image.hw() != parse.hw() {
        return dim_err(format!(
            "person inputs disagree: image {:?}, dense pose {:?}, parse {:?}",
            image.hw(),
            dense_pose.hw(),
            parse.hw()
        ));
    }
    let t = Tensor::cat(
        &[
            image.tensor().to_dtype(dtype)?,
            dense_pose.tensor().to_dtype(dtype)?,
            parse.one_hot(dtype)?,
        ],
        0,
    )?;
    Ok(t.unsqueeze(0)?)
}

/// Runs `extractor` over the concatenated person-stream inputs.
pub fn extract_pyramid(
    extractor: &PyramidExtractor,
    image: &ImageTensor,
    dense_pose: &ImageTensor,
    parse: &ParseMap,
) -> Result<FeaturePyramid> {
    let dtype = extractor.convs[0].weight().dtype();
    extractor.extract(&person_input(image, dense_pose, parse, dtype)?)
}

/// `alpha * low + beta * high`, where `high` was already resampled and projected onto `low`.
pub fn fuse_features(low: &Tensor, high: &Tensor, alpha: f64, beta: f64) -> Result<Tensor> {
    if low.dims() != high.dims() {
        return dim_err(format!(
            "fusion inputs {:?} vs {:?}",
            low.dims(),
            high.dims()
        ));
    }
    Ok(((low * alpha)? + (high * beta)?)?)
}

/// Projects level `l + 1` onto level `l` (bilinear upsample + 1x1 conv) and
/// fuses it with level `l`. The coarsest level passes through.
#[derive(Debug, Clone)]
pub struct FusionHead {
    projections: Vec<Conv2d>,
    alpha: f64,
    beta: f64,
}

impl FusionHead {
    pub fn new(vs: &Scope, config: &WarpConfig) -> Result<Self> {
        let ch = &config.level_channels;
        let projections = (0..ch.len() - 1)
            .map(|l| {
                Conv2d::new(
                    &vs.pp(format!("proj{l}")),
                    ch[l + 1],
                    ch[l],
                    1,
                    1,
                    LayerInit::Default,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            projections,
            alpha: config.fuse_alpha,
            beta: config.fuse_beta,
        })
    }

    pub fn project(&self, pyramid: &FeaturePyramid, l: usize) -> Result<Tensor> {
        let (_, _, h, w) = pyramid.level(l).dims4()?;
        let up = resize_bilinear(pyramid.level(l + 1), h, w)?;
        Ok(self.projections[l].forward(&up)?)
    }

    pub fn fuse(&self, pyramid: &FeaturePyramid) -> Result<Vec<Tensor>> {
        let depth = pyramid.depth();
        let mut out = Vec::with_capacity(depth);
        for l in 0..depth - 1 {
            out.push(fuse_features(
                pyramid.level(l),
                &self.project(pyramid, l)?,
                self.alpha,
                self.beta,
            )?);
        }
        out.push(pyramid.level(depth - 1).clone());
        Ok(out)
    }
}
