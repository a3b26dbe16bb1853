//! Deformable convolution: `y(p) = sum_n w(p_n) x(p + p_n + dp_n(p))`.

use candle_core::{Module, Tensor};

use crate::error::{dim_err, Result};
use crate::nn::{sample_taps, Conv2d, LayerInit};
use crate::params::{Init, Scope};

/// Kernel weights, the implicit `k x k` sampling grid, and a per-pixel offset field.
#[derive(Debug, Clone)]
pub struct DeformableKernel {
    /// `(c_out, c_in, k, k)`.
    pub weights: Tensor,
    pub bias: Option<Tensor>,
    /// `(B, 2 k^2, h, w)`; channel `2n` is the x offset of tap `n`, `2n + 1` the y offset.
    pub offsets: Tensor,
}

impl DeformableKernel {
    pub fn kernel_size(&self) -> usize {
        self.weights.dims()[2]
    }

    /// Integer tap offsets `p_n` in row-major order, as `(dx, dy)`.
    pub fn grid(&self) -> Vec<(i64, i64)> {
        let k = self.kernel_size() as i64;
        let r = k / 2;
        (0..k * k).map(|n| (n % k - r, n / k - r)).collect()
    }
}

/// Stride-1, same-size deformable convolution.
pub fn deform_conv(input: &Tensor, kernel: &DeformableKernel) -> Result<Tensor> {
    let (b, c_in, h, w) = input.dims4()?;
    let (c_out, wc_in, kh, kw) = kernel.weights.dims4()?;
    if kh != kw || kh % 2 == 0 {
        return dim_err(format!("kernel must be square and odd, got {kh}x{kw}"));
    }
    if wc_in != c_in {
        return dim_err(format!("kernel expects {wc_in} input channels, got {c_in}"));
    }
    let (ob, oc, oh, ow) = kernel.offsets.dims4()?;
    if (ob, oc, oh, ow) != (b, 2 * kh * kw, h, w) {
        return dim_err(format!(
            "offset field {:?} does not match input {:?} for a {kh}x{kw} kernel",
            kernel.offsets.dims(),
            input.dims()
        ));
    }
    let cols = sample_taps(input, &kernel.offsets, kh)?.reshape((b, c_in * kh * kw, h * w))?;
    let wmat = kernel.weights.reshape((c_out, c_in * kh * kw))?;
    let mut y = wmat.broadcast_matmul(&cols)?.reshape((b, c_out, h, w))?;
    if let Some(bias) = &kernel.bias {
        y = y.broadcast_add(&bias.reshape((1, c_out, 1, 1))?)?;
    }
    Ok(y)
}

/// Deformable layer whose offsets come from a plain convolution over a guide
/// tensor. The offset branch starts at zero so the layer initially behaves
/// as an ordinary convolution.
#[derive(Debug, Clone)]
pub struct DeformConv2d {
    offset_conv: Conv2d,
    weight: Tensor,
    bias: Tensor,
    k: usize,
}

impl DeformConv2d {
    pub fn new(
        vs: &Scope,
        guide_channels: usize,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Result<Self> {
        Ok(Self {
            offset_conv: Conv2d::new(
                &vs.pp("offset"),
                guide_channels,
                2 * k * k,
                3,
                1,
                LayerInit::Zero,
            )?,
            weight: vs.get(
                "weight",
                &[c_out, c_in, k, k],
                Init::Uniform {
                    fan_in: c_in * k * k,
                },
            )?,
            bias: vs.get("bias", &[c_out], Init::Zeros)?,
            k,
        })
    }

    pub fn kernel_for(&self, guide: &Tensor) -> Result<DeformableKernel> {
        Ok(DeformableKernel {
            weights: self.weight.clone(),
            bias: Some(self.bias.clone()),
            offsets: self.offset_conv.forward(guide)?,
        })
    }

    pub fn forward(&self, x: &Tensor, guide: &Tensor) -> Result<Tensor> {
        deform_conv(x, &self.kernel_for(guide)?)
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn constant_input_ones_kernel_interior_is_nine_c() {
        let x = Tensor::full(0.7f64, (1, 1, 6, 6), &Device::Cpu).unwrap();
        let offsets = Tensor::full(0.3f64, (1, 18, 6, 6), &Device::Cpu).unwrap();
        let k = DeformableKernel {
            weights: Tensor::ones((1, 1, 3, 3), DType::F64, &Device::Cpu).unwrap(),
            bias: None,
            offsets,
        };
        let y = deform_conv(&x, &k)
            .unwrap()
            .squeeze(0)
            .unwrap()
            .squeeze(0)
            .unwrap()
            .to_vec2::<f64>()
            .unwrap();
        // taps reach at most 1.3 pixels away; rows/cols 1..=3 keep every corner in bounds
        for row in y.iter().take(4).skip(1) {
            for v in row.iter().take(4).skip(1) {
                assert!((v - 9.0 * 0.7).abs() < 1e-12);
            }
        }
    }

    /// Hand-computed bilinear midpoint on a 4x4 ramp.
    #[test]
    fn half_pixel_offset_on_single_tap() {
        let x = Tensor::arange(0f64, 16., &Device::Cpu)
            .unwrap()
            .reshape((1, 1, 4, 4))
            .unwrap();
        let mut off = vec![0f64; 18 * 16];
        // centre tap (n = 4), x offset 0.5 at pixel (1, 1)
        off[8 * 16 + 5] = 0.5;
        let mut w = vec![0f64; 9];
        w[4] = 1.0;
        let k = DeformableKernel {
            weights: Tensor::from_vec(w, (1, 1, 3, 3), &Device::Cpu).unwrap(),
            bias: None,
            offsets: Tensor::from_vec(off, (1, 18, 4, 4), &Device::Cpu).unwrap(),
        };
        let y = deform_conv(&x, &k)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        // input(1, 1) = 5, input(1, 2) = 6
        assert_eq!(y[5], 5.5);
        assert_eq!(y[6], 6.0);
    }

    #[test]
    fn grid_is_row_major() {
        let k = DeformableKernel {
            weights: Tensor::zeros((1, 1, 3, 3), DType::F32, &Device::Cpu).unwrap(),
            bias: None,
            offsets: Tensor::zeros((1, 18, 2, 2), DType::F32, &Device::Cpu).unwrap(),
        };
        assert_eq!(k.grid()[0], (-1, -1));
        assert_eq!(k.grid()[5], (1, 0));
    }

    #[test]
    fn offset_dims_mismatch_rejected() {
        let x = Tensor::zeros((1, 2, 5, 5), DType::F32, &Device::Cpu).unwrap();
        let k = DeformableKernel {
            weights: Tensor::zeros((1, 2, 3, 3), DType::F32, &Device::Cpu).unwrap(),
            bias: None,
            offsets: Tensor::zeros((1, 18, 4, 5), DType::F32, &Device::Cpu).unwrap(),
        };
        assert!(deform_conv(&x, &k).is_err());
    }
}
