//! Separable bilinear resizing expressed as two matrix products, so it is
//! differentiable through candle's matmul.

use candle_core::{DType, Device, Tensor};

/// Row-stochastic `n_out x n_in` interpolation matrix using half-pixel
/// centres and edge clamping.
pub fn interpolation_matrix(n_in: usize, n_out: usize) -> Vec<f64> {
    let mut m = vec![0f64; n_out * n_in];
    let scale = n_in as f64 / n_out as f64;
    for i in 0..n_out {
        let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = src.floor() as usize;
        let f = src - i0 as f64;
        let i1 = (i0 + 1).min(n_in - 1);
        m[i * n_in + i0] += 1.0 - f;
        m[i * n_in + i1] += f;
    }
    m
}

fn matrix(n_in: usize, n_out: usize, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
    Tensor::from_vec(interpolation_matrix(n_in, n_out), (n_out, n_in), dev)?.to_dtype(dtype)
}

/// Resizes the two trailing axes of a `(.., H, W)` tensor to `(h, w)`.
pub fn resize_bilinear(x: &Tensor, h: usize, w: usize) -> candle_core::Result<Tensor> {
    let dims = x.dims();
    let rank = dims.len();
    if rank < 2 {
        candle_core::bail!("resize needs at least two axes, got {dims:?}");
    }
    let (ih, iw) = (dims[rank - 2], dims[rank - 1]);
    if (ih, iw) == (h, w) {
        return Ok(x.clone());
    }
    let ah = matrix(ih, h, x.dtype(), x.device())?;
    let aw = matrix(iw, w, x.dtype(), x.device())?.t()?;
    let y = ah.broadcast_matmul(&x.contiguous()?)?;
    y.broadcast_matmul(&aw)
}

/// Mean over non-overlapping `factor x factor` blocks. Trailing axes must be divisible.
pub fn area_downsample(x: &Tensor, factor: usize) -> candle_core::Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    if h % factor != 0 || w % factor != 0 {
        candle_core::bail!("{h}x{w} is not divisible by {factor}");
    }
    x.avg_pool2d(factor)
}
