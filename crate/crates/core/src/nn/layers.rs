use candle_core::{DType, Device, Module, Tensor, D};

use crate::error::Result;
use crate::params::{Init, Scope};

/// Weight initialisation for a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerInit {
    /// Uniform fan-in weights, zero bias.
    Default,
    /// All-zero weights and bias.
    Zero,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// `k x k` convolution with "same" padding for stride 1.
    pub fn new(
        vs: &Scope,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        init: LayerInit,
    ) -> Result<Self> {
        let w_init = match init {
            LayerInit::Default => Init::Uniform {
                fan_in: c_in * k * k,
            },
            LayerInit::Zero => Init::Zeros,
        };
        Ok(Self {
            weight: vs.get("weight", &[c_out, c_in, k, k], w_init)?,
            bias: vs.get("bias", &[c_out], Init::Zeros)?,
            stride,
            padding: k / 2,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(vs: &Scope, d_in: usize, d_out: usize, init: LayerInit) -> Result<Self> {
        Self::build(vs, d_in, d_out, init, true)
    }

    pub fn no_bias(vs: &Scope, d_in: usize, d_out: usize, init: LayerInit) -> Result<Self> {
        Self::build(vs, d_in, d_out, init, false)
    }

    fn build(vs: &Scope, d_in: usize, d_out: usize, init: LayerInit, bias: bool) -> Result<Self> {
        let w_init = match init {
            LayerInit::Default => Init::Uniform { fan_in: d_in },
            LayerInit::Zero => Init::Zeros,
        };
        Ok(Self {
            weight: vs.get("weight", &[d_out, d_in], w_init)?,
            bias: if bias {
                Some(vs.get("bias", &[d_out], Init::Zeros)?)
            } else {
                None
            },
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }
}

impl Module for Linear {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        match &self.bias {
            Some(b) => y.broadcast_add(b),
            None => Ok(y),
        }
    }
}

/// Layer normalisation over the last axis, built from differentiable primitives.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(vs: &Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: vs.get("weight", &[dim], Init::Ones)?,
            bias: vs.get("bias", &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        xn.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

/// Group normalisation for `(B, C, H, W)` inputs.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    weight: Tensor,
    bias: Tensor,
    groups: usize,
    eps: f64,
}

impl GroupNorm {
    pub fn new(vs: &Scope, channels: usize, groups: usize) -> Result<Self> {
        let groups = if channels % groups == 0 { groups } else { 1 };
        Ok(Self {
            weight: vs.get("weight", &[channels], Init::Ones)?,
            bias: vs.get("bias", &[channels], Init::Zeros)?,
            groups,
            eps: 1e-5,
        })
    }
}

impl Module for GroupNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let g = x.reshape((b, self.groups, c / self.groups * h * w))?;
        let mean = g.mean_keepdim(D::Minus1)?;
        let gc = g.broadcast_sub(&mean)?;
        let var = gc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = gc
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .reshape((b, c, h, w))?;
        xn.broadcast_mul(&self.weight.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.bias.reshape((1, c, 1, 1))?)
    }
}

pub fn leaky_relu(x: &Tensor) -> candle_core::Result<Tensor> {
    x.relu()? - (x.neg()?.relu()? * 0.1)?
}

/// Multi-head attention with an optional key padding mask.
#[derive(Debug, Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(
        vs: &Scope,
        dim: usize,
        ctx_dim: usize,
        heads: usize,
        out_init: LayerInit,
    ) -> Result<Self> {
        Ok(Self {
            q: Linear::no_bias(&vs.pp("q"), dim, dim, LayerInit::Default)?,
            k: Linear::no_bias(&vs.pp("k"), ctx_dim, dim, LayerInit::Default)?,
            v: Linear::no_bias(&vs.pp("v"), ctx_dim, dim, LayerInit::Default)?,
            out: Linear::new(&vs.pp("out"), dim, dim, out_init)?,
            heads,
        })
    }

    /// `x: (B, S, dim)`, `ctx: (B, T, ctx_dim)`, `key_valid: (B, T)` with 1 for real tokens.
    pub fn forward(
        &self,
        x: &Tensor,
        ctx: &Tensor,
        key_valid: Option<&Tensor>,
    ) -> candle_core::Result<Tensor> {
        let (b, s, dim) = x.dims3()?;
        let t = ctx.dim(1)?;
        let hd = dim / self.heads;
        let split = |y: Tensor, n: usize| -> candle_core::Result<Tensor> {
            y.reshape((b, n, self.heads, hd))?
                .transpose(1, 2)?
                .contiguous()
        };
        let q = split(self.q.forward(x)?, s)?;
        let k = split(self.k.forward(ctx)?, t)?;
        let v = split(self.v.forward(ctx)?, t)?;
        let mut scores = (q.matmul(&k.t()?)? / (hd as f64).sqrt())?;
        if let Some(valid) = key_valid {
            // invalid keys get a large negative bias
            let bias = ((valid.to_dtype(scores.dtype())? - 1.0)? * 1e9)?.reshape((b, 1, 1, t))?;
            scores = scores.broadcast_add(&bias)?;
        }
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let y = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, s, dim))?;
        self.out.forward(&y)
    }
}

/// Pre-norm transformer block. With `LayerInit::Zero` both residual branches
/// start at zero, making the block the identity map.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl TransformerBlock {
    pub fn new(vs: &Scope, dim: usize, heads: usize, branch_init: LayerInit) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(&vs.pp("ln1"), dim)?,
            attn: Attention::new(&vs.pp("attn"), dim, dim, heads, branch_init)?,
            ln2: LayerNorm::new(&vs.pp("ln2"), dim)?,
            fc1: Linear::new(&vs.pp("fc1"), dim, 2 * dim, LayerInit::Default)?,
            fc2: Linear::new(&vs.pp("fc2"), 2 * dim, dim, branch_init)?,
        })
    }

    pub fn forward(&self, x: &Tensor, valid: Option<&Tensor>) -> candle_core::Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h, valid)?)?;
        let h = self
            .fc2
            .forward(&self.fc1.forward(&self.ln2.forward(&x)?)?.gelu()?)?;
        x + h
    }
}

/// Sinusoidal timestep features, `(len(t), dim)`.
pub fn timestep_embedding(t: &[usize], dim: usize, dtype: DType) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &step in t {
        for i in 0..dim {
            let k = i % half.max(1);
            let freq = (-(10000f64.ln()) * k as f64 / half.max(1) as f64).exp();
            let a = step as f64 * freq;
            data.push(if i < half { a.sin() } else { a.cos() });
        }
    }
    Ok(Tensor::from_vec(data, (t.len(), dim), &Device::Cpu)?.to_dtype(dtype)?)
}
