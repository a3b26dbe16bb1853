use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::tensor::{ImageTensor, ValueRange};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Odd side of the Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the inputs.
    pub l: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            l: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.l).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.l).powi(2)
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable filtering over the valid region of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, gi) in g.iter().enumerate() {
                acc += gi * plane[y * w + x + i];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, gi) in g.iter().enumerate() {
                acc += gi * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// SSIM of two `c x h x w` planar buffers: mean of the per-pixel map over
/// the valid region, averaged over channels.
pub fn ssim_planes(
    x: &[f64],
    y: &[f64],
    c: usize,
    h: usize,
    w: usize,
    params: &SsimParams,
) -> Result<f64> {
    if x.len() != c * h * w || y.len() != x.len() {
        return dim_err(format!(
            "ssim inputs of {} and {} values for {c}x{h}x{w}",
            x.len(),
            y.len()
        ));
    }
    if params.window % 2 == 0 || params.window == 0 {
        return arg_err("ssim window must be odd");
    }
    if h < params.window || w < params.window {
        return dim_err(format!(
            "{h}x{w} image is smaller than the {0}x{0} window",
            params.window
        ));
    }
    let g = gaussian_window(params.window, params.sigma);
    let (c1, c2) = (params.c1(), params.c2());
    let n = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let a = &x[ch * n..(ch + 1) * n];
        let b = &y[ch * n..(ch + 1) * n];
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(b).map(|(p, q)| p * q).collect();
        let mu_a = filter_valid(a, h, w, &g);
        let mu_b = filter_valid(b, h, w, &g);
        let e_aa = filter_valid(&aa, h, w, &g);
        let e_bb = filter_valid(&bb, h, w, &g);
        let e_ab = filter_valid(&ab, h, w, &g);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

/// SSIM with the default window, on images mapped into `[0, 1]`.
pub fn ssim(x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    ssim_with(x, y, &SsimParams::default())
}

pub fn ssim_with(x: &ImageTensor, y: &ImageTensor, params: &SsimParams) -> Result<f64> {
    let dims = x.tensor().dims().to_vec();
    if dims != y.tensor().dims() {
        return dim_err(format!("ssim of {dims:?} and {:?}", y.tensor().dims()));
    }
    let a = x.with_range(ValueRange::Unit)?.to_vec_f64()?;
    let b = y.with_range(ValueRange::Unit)?.to_vec_f64()?;
    ssim_planes(&a, &b, dims[0], dims[1], dims[2], params)
}
