//! Bilinear tap sampling with analytic gradients.
//!
//! `sample_taps` gathers, for every output pixel and every tap of a `k x k`
//! kernel, the bilinearly interpolated input value at
//! `p + p_n + offset_n(p)`. The result is laid out channel-major and tap-minor
//! (`c * k^2 + n`) so it can be contracted directly with a
//! `c_out x (c_in * k^2)` weight matrix. With `k = 1` it is plain
//! flow-based image warping. Samples outside the image read zero.

use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor, WithDType};

/// Offset channel `2n` holds the horizontal displacement of tap `n`,
/// channel `2n + 1` the vertical one.
#[derive(Debug, Clone, Copy)]
struct SampleTaps {
    kernel: usize,
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl Dims {
    fn taps(&self) -> usize {
        self.k * self.k
    }
}

/// Corner indices and weights for one sampling position.
#[derive(Clone, Copy)]
struct Bilinear {
    idx: [Option<usize>; 4],
    wgt: [f64; 4],
    fx: f64,
    fy: f64,
}

#[inline]
fn bilinear(py: f64, px: f64, h: usize, w: usize) -> Bilinear {
    let y0 = py.floor();
    let x0 = px.floor();
    let fy = py - y0;
    let fx = px - x0;
    let (y0, x0) = (y0 as i64, x0 as i64);
    let at = |y: i64, x: i64| -> Option<usize> {
        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
            Some(y as usize * w + x as usize)
        } else {
            None
        }
    };
    Bilinear {
        idx: [
            at(y0, x0),
            at(y0, x0 + 1),
            at(y0 + 1, x0),
            at(y0 + 1, x0 + 1),
        ],
        wgt: [
            (1. - fy) * (1. - fx),
            (1. - fy) * fx,
            fy * (1. - fx),
            fy * fx,
        ],
        fx,
        fy,
    }
}

#[inline]
fn tap_position(d: &Dims, off: &[f64], b: usize, n: usize, y: usize, x: usize) -> (f64, f64) {
    let hw = d.h * d.w;
    let r = (d.k / 2) as f64;
    let base = b * 2 * d.taps() * hw + y * d.w + x;
    let dx = off[base + 2 * n * hw];
    let dy = off[base + (2 * n + 1) * hw];
    let ty = (n / d.k) as f64 - r;
    let tx = (n % d.k) as f64 - r;
    (y as f64 + ty + dy, x as f64 + tx + dx)
}

fn taps_forward(input: &[f64], off: &[f64], d: Dims) -> Vec<f64> {
    let hw = d.h * d.w;
    let kk = d.taps();
    let mut out = vec![0f64; d.b * d.c * kk * hw];
    for b in 0..d.b {
        for n in 0..kk {
            for y in 0..d.h {
                for x in 0..d.w {
                    let (py, px) = tap_position(&d, off, b, n, y, x);
                    let s = bilinear(py, px, d.h, d.w);
                    for c in 0..d.c {
                        let plane = &input[(b * d.c + c) * hw..(b * d.c + c + 1) * hw];
                        let mut v = 0.0;
                        for q in 0..4 {
                            if let Some(i) = s.idx[q] {
                                v += s.wgt[q] * plane[i];
                            }
                        }
                        out[((b * d.c + c) * kk + n) * hw + y * d.w + x] = v;
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d input, d offsets)`.
fn taps_backward(input: &[f64], off: &[f64], grad: &[f64], d: Dims) -> (Vec<f64>, Vec<f64>) {
    let hw = d.h * d.w;
    let kk = d.taps();
    let mut g_in = vec![0f64; input.len()];
    let mut g_off = vec![0f64; off.len()];
    for b in 0..d.b {
        for n in 0..kk {
            for y in 0..d.h {
                for x in 0..d.w {
                    let (py, px) = tap_position(&d, off, b, n, y, x);
                    let s = bilinear(py, px, d.h, d.w);
                    let (mut gx, mut gy) = (0.0, 0.0);
                    for c in 0..d.c {
                        let g = grad[((b * d.c + c) * kk + n) * hw + y * d.w + x];
                        if g == 0.0 {
                            continue;
                        }
                        let base = (b * d.c + c) * hw;
                        let mut v = [0f64; 4];
                        for q in 0..4 {
                            if let Some(i) = s.idx[q] {
                                v[q] = input[base + i];
                                g_in[base + i] += s.wgt[q] * g;
                            }
                        }
                        gx += g * ((1. - s.fy) * (v[1] - v[0]) + s.fy * (v[3] - v[2]));
                        gy += g * ((1. - s.fx) * (v[2] - v[0]) + s.fx * (v[3] - v[1]));
                    }
                    let obase = b * 2 * kk * hw + y * d.w + x;
                    g_off[obase + 2 * n * hw] += gx;
                    g_off[obase + (2 * n + 1) * hw] += gy;
                }
            }
        }
    }
    (g_in, g_off)
}

fn as_f64<T: WithDType>(s: &[T]) -> Vec<f64> {
    s.iter().map(|v| v.to_f64()).collect()
}

fn contiguous<'a, T>(v: &'a [T], l: &Layout) -> candle_core::Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&v[a..b]),
        None => candle_core::bail!("sample_taps expects contiguous inputs"),
    }
}

impl SampleTaps {
    fn dims(&self, input: &Shape, off: &Shape) -> candle_core::Result<Dims> {
        let (b, c, h, w) = input.dims4()?;
        let (ob, oc, oh, ow) = off.dims4()?;
        let k = self.kernel;
        if ob != b || oc != 2 * k * k || oh != h || ow != w {
            candle_core::bail!(
                "offset field {:?} does not match input {:?} for a {k}x{k} kernel",
                off.dims(),
                input.dims()
            );
        }
        Ok(Dims { b, c, h, w, k })
    }
}

impl CustomOp2 for SampleTaps {
    fn name(&self) -> &'static str {
        "sample-taps"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = self.dims(l1.shape(), l2.shape())?;
        let out_shape = Shape::from((d.b, d.c * d.taps(), d.h, d.w));
        let storage = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(o)) => {
                let out = taps_forward(&as_f64(contiguous(x, l1)?), &as_f64(contiguous(o, l2)?), d);
                CpuStorage::F32(out.into_iter().map(|v| v as f32).collect())
            }
            (CpuStorage::F64(x), CpuStorage::F64(o)) => {
                CpuStorage::F64(taps_forward(contiguous(x, l1)?, contiguous(o, l2)?, d))
            }
            _ => candle_core::bail!("sample_taps supports matching f32 or f64 inputs"),
        };
        Ok((storage, out_shape))
    }

    fn bwd(
        &self,
        input: &Tensor,
        offsets: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let d = self.dims(input.shape(), offsets.shape())?;
        let read = |t: &Tensor| -> candle_core::Result<Vec<f64>> {
            t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()
        };
        let (g_in, g_off) = taps_backward(&read(input)?, &read(offsets)?, &read(grad_res)?, d);
        let dtype = input.dtype();
        let dev = input.device();
        let g_in = Tensor::from_vec(g_in, input.shape(), dev)?.to_dtype(dtype)?;
        let g_off = Tensor::from_vec(g_off, offsets.shape(), dev)?.to_dtype(dtype)?;
        Ok((Some(g_in), Some(g_off)))
    }
}

/// Samples every tap of a `kernel x kernel` grid displaced by `offsets`.
///
/// `input` is `(B, C, H, W)`, `offsets` `(B, 2 k^2, H, W)`; the result is
/// `(B, C k^2, H, W)`. Differentiable with respect to both arguments.
pub fn sample_taps(input: &Tensor, offsets: &Tensor, kernel: usize) -> candle_core::Result<Tensor> {
    if kernel % 2 == 0 {
        candle_core::bail!("kernel size must be odd, got {kernel}");
    }
    let input = input.contiguous()?;
    let offsets = offsets.contiguous()?;
    input.apply_op2(&offsets, SampleTaps { kernel })
}

/// Bilinear warp: `out(p) = input(p + flow(p))`, zero outside.
pub fn warp_bilinear(input: &Tensor, flow: &Tensor) -> candle_core::Result<Tensor> {
    sample_taps(input, flow, 1)
}

/// Nearest-neighbour warp. Not differentiable.
pub fn warp_nearest(input: &Tensor, flow: &Tensor) -> candle_core::Result<Tensor> {
    let (b, c, h, w) = input.dims4()?;
    let (fb, fc, fh, fw) = flow.dims4()?;
    if (fb, fc, fh, fw) != (b, 2, h, w) {
        candle_core::bail!(
            "flow {:?} does not match input {:?}",
            flow.dims(),
            input.dims()
        );
    }
    let dtype = input.dtype();
    let x = input
        .flatten_all()?
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?;
    let f = flow.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    let hw = h * w;
    let mut out = vec![0f64; x.len()];
    for bi in 0..b {
        for y in 0..h {
            for xi in 0..w {
                let p = y * w + xi;
                let sx = (xi as f64 + f[bi * 2 * hw + p] + 0.5).floor();
                let sy = (y as f64 + f[bi * 2 * hw + hw + p] + 0.5).floor();
                if sx < 0.0 || sy < 0.0 || sx >= w as f64 || sy >= h as f64 {
                    continue;
                }
                let q = sy as usize * w + sx as usize;
                for ci in 0..c {
                    out[(bi * c + ci) * hw + p] = x[(bi * c + ci) * hw + q];
                }
            }
        }
    }
    Tensor::from_vec(out, input.shape(), input.device())?.to_dtype(dtype)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn zero_offset_taps_are_shifted_copies() {
        let x = Tensor::arange(0f64, 16., &Device::Cpu)
            .unwrap()
            .reshape((1, 1, 4, 4))
            .unwrap();
        let off = Tensor::zeros((1, 18, 4, 4), DType::F64, &Device::Cpu).unwrap();
        let cols = sample_taps(&x, &off, 3).unwrap();
        let cols = cols.squeeze(0).unwrap();
        // centre tap is the input itself
        let centre = cols
            .get(4)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        assert_eq!(centre, (0..16).map(|v| v as f64).collect::<Vec<_>>());
        // top-left tap at pixel (1,1) reads input (0,0)
        let tl = cols.get(0).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(tl[1][1], 0.0);
        assert_eq!(tl[0][0], 0.0); // out of bounds
        assert_eq!(tl[2][3], 6.0);
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::zeros((1, 1, 4, 4), DType::F32, &Device::Cpu).unwrap();
        let off = Tensor::zeros((1, 8, 4, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(sample_taps(&x, &off, 2).is_err());
    }

    #[test]
    fn mismatched_offsets_rejected() {
        let x = Tensor::zeros((1, 1, 4, 4), DType::F32, &Device::Cpu).unwrap();
        let off = Tensor::zeros((1, 18, 4, 3), DType::F32, &Device::Cpu).unwrap();
        assert!(sample_taps(&x, &off, 3).is_err());
    }
}
