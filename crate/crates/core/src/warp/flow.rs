use candle_core::{DType, Device, Tensor};

use crate::error::{arg_err, dim_err, Result};
use crate::nn::{resize_bilinear, warp_bilinear, warp_nearest};
use crate::tensor::ImageTensor;

/// A batch of dense displacement fields, `(B, 2, h, w)`.
///
/// Channel 0 is the horizontal displacement in pixels of the field's own
/// resolution, channel 1 the vertical one.
#[derive(Debug, Clone)]
pub struct AppearanceFlow(Tensor);

impl AppearanceFlow {
    pub fn new(data: Tensor) -> Result<Self> {
        let (_, c, h, w) = data.dims4()?;
        if c != 2 || h == 0 || w == 0 {
            return dim_err(format!("flow must be (B, 2, h, w), got {:?}", data.dims()));
        }
        Ok(Self(data))
    }

    pub fn zeros(batch: usize, h: usize, w: usize, dtype: DType) -> Result<Self> {
        Self::new(Tensor::zeros((batch, 2, h, w), dtype, &Device::Cpu)?)
    }

    /// Spatially constant flow `(dx, dy)`.
    pub fn constant(
        batch: usize,
        h: usize,
        w: usize,
        dx: f64,
        dy: f64,
        dtype: DType,
    ) -> Result<Self> {
        let mut v = vec![dx; h * w];
        v.extend(std::iter::repeat_n(dy, h * w));
        let one = Tensor::from_vec(v, (1, 2, h, w), &Device::Cpu)?.to_dtype(dtype)?;
        Self::new(one.repeat((batch, 1, 1, 1))?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.dims()[0]
    }

    /// `(h, w)`.
    pub fn hw(&self) -> (usize, usize) {
        let d = self.0.dims();
        (d[2], d[3])
    }

    /// Checks that every displacement is finite.
    pub fn is_finite(&self) -> Result<bool> {
        let v = self
            .0
            .flatten_all()?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?;
        Ok(v.iter().all(|x| x.is_finite()))
    }
}

fn same_dims(a: &AppearanceFlow, b: &AppearanceFlow) -> Result<()> {
    if a.0.dims() != b.0.dims() {
        return dim_err(format!("flow dims {:?} vs {:?}", a.0.dims(), b.0.dims()));
    }
    Ok(())
}

/// Displacement-field composition:
/// `composed(x) = residual(x) + prev(x + residual(x))`, sampled bilinearly.
pub fn compose_flow(prev: &AppearanceFlow, residual: &AppearanceFlow) -> Result<AppearanceFlow> {
    same_dims(prev, residual)?;
    let sampled = warp_bilinear(&prev.0, &residual.0)?;
    AppearanceFlow::new((&residual.0 + sampled)?)
}

/// Bilinear resize to `(h, w)` with displacements rescaled per axis.
pub fn resize_flow(flow: &AppearanceFlow, h: usize, w: usize) -> Result<AppearanceFlow> {
    let (h0, w0) = flow.hw();
    if (h0, w0) == (h, w) {
        return Ok(flow.clone());
    }
    let up = resize_bilinear(&flow.0, h, w)?;
    let sx = w as f64 / w0 as f64;
    let sy = h as f64 / h0 as f64;
    let x = (up.narrow(1, 0, 1)? * sx)?;
    let y = (up.narrow(1, 1, 1)? * sy)?;
    AppearanceFlow::new(Tensor::cat(&[x, y], 1)?)
}

/// Upsamples by an integer factor, scaling displacement magnitudes by the same factor.
pub fn upsample_flow(flow: &AppearanceFlow, factor: usize) -> Result<AppearanceFlow> {
    if factor < 1 {
        return arg_err(format!("upsample factor must be >= 1, got {factor}"));
    }
    let (h, w) = flow.hw();
    resize_flow(flow, h * factor, w * factor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpMode {
    Bilinear,
    Nearest,
}

/// Batched warp: `out(x) = input(x + flow(x))`, zero-filled outside.
pub fn warp_tensor(input: &Tensor, flow: &AppearanceFlow, mode: WarpMode) -> Result<Tensor> {
    let (b, _, h, w) = input.dims4()?;
    if flow.batch() != b || flow.hw() != (h, w) {
        return dim_err(format!(
            "flow {:?} does not match input {:?}",
            flow.0.dims(),
            input.dims()
        ));
    }
    let flow = flow.0.to_dtype(input.dtype())?;
    Ok(match mode {
        WarpMode::Bilinear => warp_bilinear(input, &flow)?,
        WarpMode::Nearest => warp_nearest(input, &flow)?,
    })
}

/// Warps a single image by a single-field flow.
pub fn warp_image(
    image: &ImageTensor,
    flow: &AppearanceFlow,
    mode: WarpMode,
) -> Result<ImageTensor> {
    if flow.batch() != 1 {
        return dim_err("warp_image expects a single flow field");
    }
    let out = warp_tensor(&image.batched()?, flow, mode)?.squeeze(0)?;
    // zero fill stays inside both value ranges
    ImageTensor::clamped(&out, image.range())
}
