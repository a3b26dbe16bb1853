use candle_core::{Module, Tensor};
use serde::{Deserialize, Serialize};

use super::condition::CONDITION_CHANNELS;
use super::latent::LATENT_CHANNELS;
use crate::error::{dim_err, Result};
use crate::nn::{
    resize_bilinear, timestep_embedding, Attention, Conv2d, GroupNorm, LayerInit, Linear,
};
use crate::params::Scope;

/// Predicts the noise in `x` (the 16-channel condition stack) at steps `t`,
/// attending to `ctx: (B, S, d_text)`.
pub trait NoisePredictor: Send + Sync {
    fn predict(
        &self,
        x: &Tensor,
        t: &[usize],
        ctx: &Tensor,
        ctx_valid: Option<&Tensor>,
    ) -> Result<Tensor>;
}

/// Adapts a closure; handy for scripted and oracle predictors.
pub struct FnPredictor<F>(pub F);

impl<F> NoisePredictor for FnPredictor<F>
where
    F: Fn(&Tensor, &[usize], &Tensor) -> Result<Tensor> + Send + Sync,
{
    fn predict(
        &self,
        x: &Tensor,
        t: &[usize],
        ctx: &Tensor,
        _ctx_valid: Option<&Tensor>,
    ) -> Result<Tensor> {
        (self.0)(x, t, ctx)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    /// Channels at full latent resolution and after the one downsampling.
    pub channels: [usize; 2],
    pub heads: usize,
    pub groups: usize,
    pub time_dim: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            channels: [32, 64],
            heads: 4,
            groups: 8,
            time_dim: 64,
        }
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn new(vs: &Scope, c_in: usize, c_out: usize, cfg: &UNetConfig) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(&vs.pp("norm1"), c_in, cfg.groups)?,
            conv1: Conv2d::new(&vs.pp("conv1"), c_in, c_out, 3, 1, LayerInit::Default)?,
            time: Linear::new(&vs.pp("time"), cfg.time_dim, c_out, LayerInit::Default)?,
            norm2: GroupNorm::new(&vs.pp("norm2"), c_out, cfg.groups)?,
            conv2: Conv2d::new(&vs.pp("conv2"), c_out, c_out, 3, 1, LayerInit::Default)?,
            skip: if c_in != c_out {
                Some(Conv2d::new(
                    &vs.pp("skip"),
                    c_in,
                    c_out,
                    1,
                    1,
                    LayerInit::Default,
                )?)
            } else {
                None
            },
        })
    }

    fn forward(&self, x: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let (b, c, _, _) = h.dims4()?;
        let h = h.broadcast_add(&self.time.forward(temb)?.reshape((b, c, 1, 1))?)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let skip = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((skip + h)?)
    }
}

#[derive(Debug, Clone)]
struct CrossAttnBlock {
    norm: GroupNorm,
    attn: Attention,
}

impl CrossAttnBlock {
    fn new(vs: &Scope, c: usize, d_text: usize, cfg: &UNetConfig) -> Result<Self> {
        Ok(Self {
            norm: GroupNorm::new(&vs.pp("norm"), c, cfg.groups)?,
            attn: Attention::new(&vs.pp("attn"), c, d_text, cfg.heads, LayerInit::Default)?,
        })
    }

    fn forward(&self, x: &Tensor, ctx: &Tensor, valid: Option<&Tensor>) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let q = self
            .norm
            .forward(x)?
            .flatten_from(2)?
            .transpose(1, 2)?
            .contiguous()?;
        let y = self
            .attn
            .forward(&q, ctx, valid)?
            .transpose(1, 2)?
            .reshape((b, c, h, w))?;
        Ok((x + y)?)
    }
}

/// A two-level UNet with a residual block and cross-attention at every
/// level. Input channels are fixed at 16, output at 4.
#[derive(Debug, Clone)]
pub struct TinyUNet {
    time1: Linear,
    time2: Linear,
    input: Conv2d,
    down_res: ResBlock,
    down_attn: CrossAttnBlock,
    downsample: Conv2d,
    mid_res1: ResBlock,
    mid_attn: CrossAttnBlock,
    mid_res2: ResBlock,
    up_res: ResBlock,
    up_attn: CrossAttnBlock,
    out_norm: GroupNorm,
    out: Conv2d,
    c0: usize,
    d_text: usize,
}

impl TinyUNet {
    pub fn new(vs: &Scope, cfg: &UNetConfig, d_text: usize) -> Result<Self> {
        let [c0, c1] = cfg.channels;
        Ok(Self {
            time1: Linear::new(&vs.pp("time1"), c0, cfg.time_dim, LayerInit::Default)?,
            time2: Linear::new(
                &vs.pp("time2"),
                cfg.time_dim,
                cfg.time_dim,
                LayerInit::Default,
            )?,
            input: Conv2d::new(
                &vs.pp("input"),
                CONDITION_CHANNELS,
                c0,
                3,
                1,
                LayerInit::Default,
            )?,
            down_res: ResBlock::new(&vs.pp("down_res"), c0, c0, cfg)?,
            down_attn: CrossAttnBlock::new(&vs.pp("down_attn"), c0, d_text, cfg)?,
            downsample: Conv2d::new(&vs.pp("downsample"), c0, c0, 3, 2, LayerInit::Default)?,
            mid_res1: ResBlock::new(&vs.pp("mid_res1"), c0, c1, cfg)?,
            mid_attn: CrossAttnBlock::new(&vs.pp("mid_attn"), c1, d_text, cfg)?,
            mid_res2: ResBlock::new(&vs.pp("mid_res2"), c1, c1, cfg)?,
            up_res: ResBlock::new(&vs.pp("up_res"), c1 + c0, c0, cfg)?,
            up_attn: CrossAttnBlock::new(&vs.pp("up_attn"), c0, d_text, cfg)?,
            out_norm: GroupNorm::new(&vs.pp("out_norm"), c0, cfg.groups)?,
            out: Conv2d::new(&vs.pp("out"), c0, LATENT_CHANNELS, 3, 1, LayerInit::Default)?,
            c0,
            d_text,
        })
    }
}

impl NoisePredictor for TinyUNet {
    fn predict(
        &self,
        x: &Tensor,
        t: &[usize],
        ctx: &Tensor,
        ctx_valid: Option<&Tensor>,
    ) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        if c != CONDITION_CHANNELS {
            return dim_err(format!(
                "denoiser takes a {CONDITION_CHANNELS}-channel stack, got {c}"
            ));
        }
        if t.len() != b || ctx.dim(0)? != b || ctx.dim(2)? != self.d_text {
            return dim_err(format!(
                "batch {b}: {} timesteps, context {:?} (d_text {})",
                t.len(),
                ctx.dims(),
                self.d_text
            ));
        }
        let dtype = self.input.weight().dtype();
        let temb = timestep_embedding(t, self.c0, dtype)?;
        let temb = self.time2.forward(&self.time1.forward(&temb)?.silu()?)?;
        let ctx = ctx.to_dtype(dtype)?;
        let h0 = self.input.forward(&x.to_dtype(dtype)?)?;
        let h0 = self.down_res.forward(&h0, &temb)?;
        let skip = self.down_attn.forward(&h0, &ctx, ctx_valid)?;
        let m = self.downsample.forward(&skip)?;
        let m = self.mid_res1.forward(&m, &temb)?;
        let m = self.mid_attn.forward(&m, &ctx, ctx_valid)?;
        let m = self.mid_res2.forward(&m, &temb)?;
        let up = resize_bilinear(&m, h, w)?;
        let u = self
            .up_res
            .forward(&Tensor::cat(&[&up, &skip], 1)?, &temb)?;
        let u = self.up_attn.forward(&u, &ctx, ctx_valid)?;
        Ok(self.out.forward(&self.out_norm.forward(&u)?.silu()?)?)
    }
}
