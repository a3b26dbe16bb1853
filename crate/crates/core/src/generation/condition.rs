use candle_core::Tensor;

use super::latent::{LatentTensor, LATENT_CHANNELS};
use crate::error::{dim_err, Result};
use crate::nn::{area_downsample, resize_bilinear};

/// Width of the denoiser input: noise, warped-garment latent, agnostic
/// latent, mask and pose.
pub const CONDITION_CHANNELS: usize = 3 * LATENT_CHANNELS + 1 + 3;

/// The geometric condition at latent resolution, batched `(B, c, h, w)`.
/// The noise component is supplied when stacking, since it changes every
/// sampling step.
#[derive(Debug, Clone)]
pub struct GeometricCondition {
    pub e_warp: LatentTensor,
    pub e_agnostic: LatentTensor,
    /// Binary try-on region, `(B, 1, h, w)`.
    pub mask: Tensor,
    /// Dense-pose rendering, `(B, 3, h, w)`.
    pub pose: Tensor,
}

impl GeometricCondition {
    /// Downsamples a full-resolution mask (area average, then threshold at
    /// 0.5) and pose map (bilinear) to the latents' size.
    pub fn new(
        e_warp: LatentTensor,
        e_agnostic: LatentTensor,
        mask_full: &Tensor,
        pose_full: &Tensor,
    ) -> Result<Self> {
        let (h, w) = e_warp.hw();
        if e_agnostic.hw() != (h, w) || e_agnostic.batch() != e_warp.batch() {
            return dim_err(format!(
                "latents disagree: {:?} vs {:?}",
                e_warp.tensor().dims(),
                e_agnostic.tensor().dims()
            ));
        }
        let mask_full = batch4(mask_full)?;
        let pose_full = batch4(pose_full)?;
        let (mb, mc, mh, mw) = mask_full.dims4()?;
        let (pb, pc, ph, pw) = pose_full.dims4()?;
        if mc != 1
            || pc != 3
            || (mh, mw) != (ph, pw)
            || mb != e_warp.batch()
            || pb != e_warp.batch()
        {
            return dim_err(format!(
                "mask {:?} / pose {:?} do not fit latents {:?}",
                mask_full.dims(),
                pose_full.dims(),
                e_warp.tensor().dims()
            ));
        }
        if mh % h != 0 || mw % w != 0 || mh / h != mw / w {
            return dim_err(format!(
                "{mh}x{mw} maps cannot be area-downsampled to {h}x{w}"
            ));
        }
        let dtype = e_warp.tensor().dtype();
        let mask = area_downsample(&mask_full.to_dtype(dtype)?, mh / h)?
            .ge(0.5)?
            .to_dtype(dtype)?;
        let pose = resize_bilinear(&pose_full.to_dtype(dtype)?, h, w)?;
        Self::from_latent_maps(e_warp, e_agnostic, mask, pose)
    }

    /// Takes maps already at latent resolution.
    pub fn from_latent_maps(
        e_warp: LatentTensor,
        e_agnostic: LatentTensor,
        mask: Tensor,
        pose: Tensor,
    ) -> Result<Self> {
        let (h, w) = e_warp.hw();
        let b = e_warp.batch();
        if mask.dims() != [b, 1, h, w]
            || pose.dims() != [b, 3, h, w]
            || e_agnostic.tensor().dims() != e_warp.tensor().dims()
        {
            return dim_err(format!(
                "condition parts {:?}, {:?}, {:?}, {:?} do not share (B, h, w) = ({b}, {h}, {w})",
                e_warp.tensor().dims(),
                e_agnostic.tensor().dims(),
                mask.dims(),
                pose.dims()
            ));
        }
        Ok(Self {
            e_warp,
            e_agnostic,
            mask,
            pose,
        })
    }

    pub fn hw(&self) -> (usize, usize) {
        self.e_warp.hw()
    }

    pub fn batch(&self) -> usize {
        self.e_warp.batch()
    }

    /// `[z(4), e_warp(4), e_agnostic(4), mask(1), pose(3)]` along channels.
    pub fn stack(&self, z: &Tensor) -> Result<Tensor> {
        let want = self.e_warp.tensor().dims();
        if z.dims() != want {
            return dim_err(format!("noise {:?} vs latents {want:?}", z.dims()));
        }
        let t = Tensor::cat(
            &[
                z,
                self.e_warp.tensor(),
                self.e_agnostic.tensor(),
                &self.mask,
                &self.pose,
            ],
            1,
        )?;
        debug_assert_eq!(t.dims()[1], CONDITION_CHANNELS);
        Ok(t)
    }

    /// Items `start..start + len` of the batch.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            e_warp: LatentTensor::new(self.e_warp.tensor().narrow(0, start, len)?)?,
            e_agnostic: LatentTensor::new(self.e_agnostic.tensor().narrow(0, start, len)?)?,
            mask: self.mask.narrow(0, start, len)?,
            pose: self.pose.narrow(0, start, len)?,
        })
    }

    pub fn cat(parts: &[GeometricCondition]) -> Result<Self> {
        let pick = |f: fn(&GeometricCondition) -> &Tensor| parts.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            e_warp: LatentTensor::new(Tensor::cat(&pick(|c| c.e_warp.tensor()), 0)?)?,
            e_agnostic: LatentTensor::new(Tensor::cat(&pick(|c| c.e_agnostic.tensor()), 0)?)?,
            mask: Tensor::cat(&pick(|c| &c.mask), 0)?,
            pose: Tensor::cat(&pick(|c| &c.pose), 0)?,
        })
    }
}

fn batch4(t: &Tensor) -> Result<Tensor> {
    Ok(if t.rank() == 3 {
        t.unsqueeze(0)?
    } else {
        t.clone()
    })
}

/// Builds the condition and its 16-channel stack with noise `z`.
pub fn assemble_geometric_condition(
    e_warp: &LatentTensor,
    e_agnostic: &LatentTensor,
    mask_full: &Tensor,
    pose_full: &Tensor,
    z: &LatentTensor,
) -> Result<(GeometricCondition, Tensor)> {
    let cond = GeometricCondition::new(e_warp.clone(), e_agnostic.clone(), mask_full, pose_full)?;
    let stack = cond.stack(z.tensor())?;
    Ok((cond, stack))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn lat(v: f32) -> LatentTensor {
        LatentTensor::new(Tensor::full(v, (1, 4, 64, 48), &Device::Cpu).unwrap()).unwrap()
    }

    #[test]
    fn ones_mask_stays_ones() {
        let mask = Tensor::ones((1, 512, 384), DType::F32, &Device::Cpu).unwrap();
        let pose = Tensor::zeros((3, 512, 384), DType::F32, &Device::Cpu).unwrap();
        let (c, stack) =
            assemble_geometric_condition(&lat(0.0), &lat(0.0), &mask, &pose, &lat(0.0)).unwrap();
        assert_eq!(c.mask.dims(), &[1, 1, 64, 48]);
        assert_eq!(
            c.mask.sum_all().unwrap().to_scalar::<f32>().unwrap(),
            64.0 * 48.0
        );
        assert_eq!(stack.dims(), &[1, CONDITION_CHANNELS, 64, 48]);
    }

    #[test]
    fn zero_parts_zero_stack() {
        let zero = Tensor::zeros((1, 512, 384), DType::F32, &Device::Cpu).unwrap();
        let pose = Tensor::zeros((3, 512, 384), DType::F32, &Device::Cpu).unwrap();
        let (_, s) =
            assemble_geometric_condition(&lat(0.0), &lat(0.0), &zero, &pose, &lat(0.0)).unwrap();
        assert_eq!(s.dims(), &[1, 16, 64, 48]);
        assert_eq!(
            s.abs()
                .unwrap()
                .sum_all()
                .unwrap()
                .to_scalar::<f32>()
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn order_matters() {
        let mask = Tensor::ones((1, 512, 384), DType::F32, &Device::Cpu).unwrap();
        let pose = Tensor::full(0.5f32, (3, 512, 384), &Device::Cpu).unwrap();
        let (_, a) =
            assemble_geometric_condition(&lat(1.0), &lat(2.0), &mask, &pose, &lat(3.0)).unwrap();
        let (_, b) =
            assemble_geometric_condition(&lat(3.0), &lat(2.0), &mask, &pose, &lat(1.0)).unwrap();
        let d = (a - b)
            .unwrap()
            .abs()
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(d > 0.0);
    }

    #[test]
    fn mask_rebinarised() {
        // a 2x2 latent; each 8x8 block is 3/4, 1/4, 1/2 and 0 covered
        let mut m = vec![0f32; 16 * 16];
        for y in 0..16 {
            for x in 0..16 {
                let (by, bx) = (y / 8, x / 8);
                let (ly, lx) = (y % 8, x % 8);
                m[y * 16 + x] = match (by, bx) {
                    (0, 0) => (ly < 6) as u8 as f32,
                    (0, 1) => (ly < 2) as u8 as f32,
                    (1, 0) => (lx < 4) as u8 as f32,
                    _ => 0.0,
                };
            }
        }
        let mask = Tensor::from_vec(m, (1, 16, 16), &Device::Cpu).unwrap();
        let pose = Tensor::zeros((3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        let z = LatentTensor::zeros(1, 2, 2, DType::F32).unwrap();
        let c = GeometricCondition::new(z.clone(), z, &mask, &pose).unwrap();
        assert_eq!(
            c.mask.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            vec![1.0, 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn mismatched_latents() {
        let a = LatentTensor::zeros(1, 4, 4, DType::F32).unwrap();
        let b = LatentTensor::zeros(1, 4, 3, DType::F32).unwrap();
        let mask = Tensor::zeros((1, 32, 32), DType::F32, &Device::Cpu).unwrap();
        let pose = Tensor::zeros((3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        assert!(GeometricCondition::new(a, b, &mask, &pose).is_err());
    }
}
