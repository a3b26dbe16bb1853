use candle_core::{DType, Module, Tensor};

use crate::error::{arg_err, dim_err, Result};
use crate::nn::{leaky_relu, warp_bilinear, Conv2d, LayerInit};
use crate::params::Scope;
use crate::tensor::{ImageTensor, ParseMap};

use super::correlation::{local_correlation, CorrelationVolume};
use super::deform::DeformConv2d;
use super::flow::{compose_flow, resize_flow, AppearanceFlow};
use super::pyramid::{person_input, FusionHead, PyramidExtractor};
use super::{WarpConfig, GARMENT_CHANNELS, PERSON_CHANNELS};

/// One refinement stage of the cascade.
#[derive(Debug, Clone)]
pub struct FlowStage {
    reduce: Conv2d,
    deform: Option<DeformConv2d>,
    plain: Option<Conv2d>,
    out: Conv2d,
    feat_channels: usize,
    radius: usize,
}

impl FlowStage {
    pub fn new(
        vs: &Scope,
        feat_channels: usize,
        radius: usize,
        head: usize,
        deformable: bool,
    ) -> Result<Self> {
        let span = 2 * radius + 1;
        let concat = 2 * feat_channels + span * span + 2;
        let (deform, plain) = if deformable {
            (
                Some(DeformConv2d::new(&vs.pp("deform"), concat, head, head, 3)?),
                None,
            )
        } else {
            (
                None,
                Some(Conv2d::new(
                    &vs.pp("conv"),
                    head,
                    head,
                    3,
                    1,
                    LayerInit::Default,
                )?),
            )
        };
        Ok(Self {
            reduce: Conv2d::new(&vs.pp("reduce"), concat, head, 1, 1, LayerInit::Default)?,
            deform,
            plain,
            // zero-initialised so an untrained stage predicts no motion
            out: Conv2d::new(&vs.pp("out"), head, 2, 3, 1, LayerInit::Zero)?,
            feat_channels,
            radius,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Predicts the flow residual from the previous flow, garment features
    /// already warped by that flow, person features, and their cost volume.
    /// Deformable offsets are predicted from the full concatenated input.
    pub fn predict_residual(
        &self,
        prev: &AppearanceFlow,
        warped_garment: &Tensor,
        person: &Tensor,
        corr: &CorrelationVolume,
    ) -> Result<AppearanceFlow> {
        let (b, c, h, w) = warped_garment.dims4()?;
        if person.dims() != warped_garment.dims() || c != self.feat_channels {
            return dim_err(format!(
                "stage expects two ({b}, {}, {h}, {w}) feature maps, got {:?} and {:?}",
                self.feat_channels,
                warped_garment.dims(),
                person.dims()
            ));
        }
        let (_, _, ch, cw) = corr.tensor().dims4()?;
        if prev.hw() != (h, w) || (ch, cw) != (h, w) || corr.radius() != self.radius {
            return dim_err(format!(
                "flow {:?} / cost volume {:?} do not match features {h}x{w}",
                prev.hw(),
                (ch, cw)
            ));
        }
        let x = Tensor::cat(&[warped_garment, person, corr.tensor(), prev.tensor()], 1)?;
        let reduced = leaky_relu(&self.reduce.forward(&x)?)?;
        let hidden = match (&self.deform, &self.plain) {
            (Some(d), _) => d.forward(&reduced, &x)?,
            (None, Some(p)) => p.forward(&reduced)?,
            _ => unreachable!(),
        };
        AppearanceFlow::new(self.out.forward(&leaky_relu(&hidden)?)?)
    }
}

/// Output of a cascade run.
#[derive(Debug, Clone)]
pub struct CascadeOutput {
    /// Full-resolution flow.
    pub flow: AppearanceFlow,
    /// Garment warped by `flow`.
    pub warped: Tensor,
    /// Flow after every stage, coarse to fine.
    pub stage_flows: Vec<AppearanceFlow>,
}

/// Garment and person pyramids, feature fusion, and `N` cascaded flow stages.
#[derive(Debug, Clone)]
pub struct WarpNetwork {
    garment: PyramidExtractor,
    person: PyramidExtractor,
    garment_fusion: FusionHead,
    person_fusion: FusionHead,
    stages: Vec<FlowStage>,
    config: WarpConfig,
}

impl WarpNetwork {
    pub fn new(vs: &Scope, config: &WarpConfig) -> Result<Self> {
        config.validate()?;
        let depth = config.level_channels.len();
        let n = config.cascade_depth;
        let stages = (0..n)
            .map(|s| {
                let level = n - 1 - s;
                FlowStage::new(
                    &vs.pp(format!("stage{s}")),
                    config.level_channels[level],
                    config.corr_radius,
                    config.head_channels,
                    config.dfen_deformable,
                )
            })
            .collect::<Result<_>>()?;
        debug_assert!(n <= depth);
        Ok(Self {
            garment: PyramidExtractor::new(&vs.pp("garment_pyramid"), GARMENT_CHANNELS, config)?,
            person: PyramidExtractor::new(&vs.pp("person_pyramid"), PERSON_CHANNELS, config)?,
            garment_fusion: FusionHead::new(&vs.pp("garment_fusion"), config)?,
            person_fusion: FusionHead::new(&vs.pp("person_fusion"), config)?,
            stages,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &WarpConfig {
        &self.config
    }

    pub fn stages(&self) -> &[FlowStage] {
        &self.stages
    }

    /// Runs the coarse-to-fine cascade on batched tensors: `garment`
    /// `(B, 3, H, W)` and `person` `(B, 19, H, W)`.
    pub fn run(&self, garment: &Tensor, person: &Tensor) -> Result<CascadeOutput> {
        self.run_stages(garment, person, self.stages.len())
    }

    /// Runs only the first `n` stages (coarse to fine); the last stage used
    /// is followed by an upsample to full resolution.
    pub fn run_stages(&self, garment: &Tensor, person: &Tensor, n: usize) -> Result<CascadeOutput> {
        if n == 0 || n > self.stages.len() {
            return arg_err(format!(
                "cascade depth {n} outside 1..={} (pyramid depth {})",
                self.stages.len(),
                self.config.level_channels.len()
            ));
        }
        let (b, _, h, w) = garment.dims4()?;
        let (pb, _, ph, pw) = person.dims4()?;
        if (pb, ph, pw) != (b, h, w) {
            return dim_err(format!(
                "garment {:?} vs person {:?}",
                garment.dims(),
                person.dims()
            ));
        }
        let g = self.garment_fusion.fuse(&self.garment.extract(garment)?)?;
        let p = self.person_fusion.fuse(&self.person.extract(person)?)?;
        let total = self.stages.len();
        let mut flow: Option<AppearanceFlow> = None;
        let mut stage_flows = Vec::with_capacity(n);
        for (s, stage) in self.stages.iter().enumerate().take(n) {
            let level = total - 1 - s;
            let (_, _, lh, lw) = g[level].dims4()?;
            let prev = match &flow {
                None => AppearanceFlow::zeros(b, lh, lw, garment.dtype())?,
                Some(f) => resize_flow(f, lh, lw)?,
            };
            let warped = warp_bilinear(&g[level], prev.tensor())?;
            let corr = local_correlation(&warped, &p[level], stage.radius())?;
            let residual = stage.predict_residual(&prev, &warped, &p[level], &corr)?;
            let next = compose_flow(&prev, &residual)?;
            stage_flows.push(next.clone());
            flow = Some(next);
        }
        let flow = resize_flow(&flow.expect("n >= 1"), h, w)?;
        let warped = warp_bilinear(garment, flow.tensor())?;
        Ok(CascadeOutput {
            flow,
            warped,
            stage_flows,
        })
    }
}

/// Person-side conditioning for the warp.
#[derive(Debug, Clone)]
pub struct PersonCondition {
    pub agnostic: ImageTensor,
    pub dense_pose: ImageTensor,
    pub parse: ParseMap,
}

/// Warps one garment onto one person with the first `n` cascade stages.
pub fn run_cascade(
    net: &WarpNetwork,
    garment: &ImageTensor,
    person: &PersonCondition,
    n: usize,
    dtype: DType,
) -> Result<(AppearanceFlow, ImageTensor)> {
    if garment.hw() != person.agnostic.hw() {
        return dim_err(format!(
            "garment {:?} vs person {:?}",
            garment.hw(),
            person.agnostic.hw()
        ));
    }
    let g = garment.batched()?.to_dtype(dtype)?;
    let p = person_input(&person.agnostic, &person.dense_pose, &person.parse, dtype)?;
    let out = net.run_stages(&g, &p, n)?;
    let warped = ImageTensor::clamped(
        &out.warped.squeeze(0)?.to_dtype(DType::F32)?,
        garment.range(),
    )?;
    Ok((out.flow, warped))
}
