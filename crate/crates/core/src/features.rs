//! Fixed random convolutional feature extractor.
//!
//! Stands in for pretrained perceptual and distribution-metric backbones.
//! Weights are drawn once from a fixed seed and never trained.

use candle_core::{DType, Module, Tensor};

use crate::error::Result;
use crate::nn::{leaky_relu, Conv2d, LayerInit};
use crate::params::ParamStore;

/// Produces one or more feature maps per image and a pooled embedding.
pub trait FeatureExtractor: Send + Sync {
    /// `x` is `(B, 3, H, W)`; each map is `(B, c_l, h_l, w_l)`.
    fn feature_maps(&self, x: &Tensor) -> Result<Vec<Tensor>>;

    /// `(B, d)` embedding: spatial means of every map, concatenated.
    fn embedding(&self, x: &Tensor) -> Result<Tensor> {
        let maps = self.feature_maps(x)?;
        let pooled = maps
            .iter()
            .map(|m| Ok(m.mean(3)?.mean(2)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&pooled, 1)?)
    }
}

pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x5eed_f00d;

/// Three stride-2 `3x3` convolutions with leaky ReLU.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    convs: Vec<Conv2d>,
}

impl RandomConvExtractor {
    pub fn new(seed: u64, widths: &[usize], dtype: DType) -> Result<Self> {
        let store = ParamStore::new(seed, dtype);
        let root = store.root();
        let mut c_in = 3;
        let mut convs = Vec::new();
        for (i, &c) in widths.iter().enumerate() {
            convs.push(Conv2d::new(
                &root.pp(format!("conv{i}")),
                c_in,
                c,
                3,
                2,
                LayerInit::Default,
            )?);
            c_in = c;
        }
        Ok(Self { convs })
    }

    /// The desk default: widths 8, 16, 32 and a fixed seed.
    pub fn desk(dtype: DType) -> Result<Self> {
        Self::new(DEFAULT_EXTRACTOR_SEED, &[8, 16, 32], dtype)
    }

    pub fn dtype(&self) -> DType {
        self.convs[0].weight().dtype()
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn feature_maps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = x.to_dtype(self.dtype())?;
        let mut maps = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            h = leaky_relu(&conv.forward(&h)?)?;
            maps.push(h.clone());
        }
        Ok(maps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn embedding_width_is_sum_of_layer_widths() {
        let ex = RandomConvExtractor::desk(DType::F32).unwrap();
        let x = Tensor::rand(0f32, 1., (2, 3, 16, 12), &Device::Cpu).unwrap();
        let maps = ex.feature_maps(&x).unwrap();
        assert_eq!(maps[0].dims(), &[2, 8, 8, 6]);
        assert_eq!(maps[2].dims(), &[2, 32, 2, 2]);
        assert_eq!(ex.embedding(&x).unwrap().dims(), &[2, 56]);
    }
}
