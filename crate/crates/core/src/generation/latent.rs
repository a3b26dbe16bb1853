use candle_core::{DType, Device, Tensor};

use crate::error::{dim_err, Result};
use crate::tensor::{ImageTensor, ValueRange};

/// Latent channels.
pub const LATENT_CHANNELS: usize = 4;
/// Spatial downsampling between pixels and latents.
pub const LATENT_FACTOR: usize = 8;

/// A `(4, H/8, W/8)` latent, stored with a leading batch axis `(B, 4, h, w)`.
#[derive(Debug, Clone)]
pub struct LatentTensor(Tensor);

impl LatentTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        let (_, c, _, _) = t.dims4()?;
        if c != LATENT_CHANNELS {
            return dim_err(format!(
                "latent must have {LATENT_CHANNELS} channels, got {c}"
            ));
        }
        Ok(Self(t))
    }

    pub fn zeros(batch: usize, h: usize, w: usize, dtype: DType) -> Result<Self> {
        Ok(Self(Tensor::zeros(
            (batch, LATENT_CHANNELS, h, w),
            dtype,
            &Device::Cpu,
        )?))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn hw(&self) -> (usize, usize) {
        let d = self.0.dims();
        (d[2], d[3])
    }

    pub fn batch(&self) -> usize {
        self.0.dims()[0]
    }
}

/// An image autoencoder honouring the `(B, 3, H, W) -> (B, 4, H/8, W/8)` contract.
pub trait LatentCodec: Send + Sync {
    fn encode(&self, x: &Tensor) -> Result<Tensor>;
    fn decode(&self, z: &Tensor) -> Result<Tensor>;
}

/// Space-to-depth over `8x8` blocks followed by a fixed `4 x 192` projection
/// with orthogonal rows: per-channel block means of R, G and B, and a
/// horizontal luminance ramp. The decoder is the transpose, so
/// `encode(decode(z)) = z` and `decode(encode(x)) = x` for every `x` in
/// the decoder's range.
#[derive(Debug, Clone)]
pub struct DeskCodec {
    /// `(192, 4)`, columns are the scaled projection rows.
    enc: Tensor,
    /// `(4, 192)`.
    dec: Tensor,
}

impl DeskCodec {
    pub fn new(dtype: DType) -> Result<Self> {
        let k = LATENT_FACTOR;
        let block = k * k;
        let d = 3 * block;
        // rows with unit norm; the latent is scaled by 1/8 so block means land in [-1, 1]
        let mut p = vec![0f64; LATENT_CHANNELS * d];
        for c in 0..3 {
            for i in 0..block {
                p[c * d + c * block + i] = 1.0 / (block as f64).sqrt();
            }
        }
        let ramp: Vec<f64> = (0..k)
            .map(|dx| dx as f64 - (k as f64 - 1.0) / 2.0)
            .collect();
        let norm = (3.0 * k as f64 * ramp.iter().map(|r| r * r).sum::<f64>()).sqrt();
        for c in 0..3 {
            for dy in 0..k {
                for dx in 0..k {
                    p[3 * d + c * block + dy * k + dx] = ramp[dx] / norm;
                }
            }
        }
        let scale = 1.0 / k as f64;
        let dec = Tensor::from_vec(
            p.iter().map(|v| v / scale).collect::<Vec<_>>(),
            (LATENT_CHANNELS, d),
            &Device::Cpu,
        )?;
        let enc = Tensor::from_vec(
            p.iter().map(|v| v * scale).collect::<Vec<_>>(),
            (LATENT_CHANNELS, d),
            &Device::Cpu,
        )?
        .t()?
        .contiguous()?;
        Ok(Self {
            enc: enc.to_dtype(dtype)?,
            dec: dec.to_dtype(dtype)?,
        })
    }
}

impl LatentCodec for DeskCodec {
    fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, hh, ww) = x.dims4()?;
        let k = LATENT_FACTOR;
        if c != 3 || hh % k != 0 || ww % k != 0 {
            return dim_err(format!(
                "encoder needs 3 channels and sides divisible by {k}, got {:?}",
                x.dims()
            ));
        }
        let (h, w) = (hh / k, ww / k);
        let blocks = x
            .to_dtype(self.enc.dtype())?
            .reshape((b, 3, h, k, w, k))?
            .permute((0, 2, 4, 1, 3, 5))?
            .reshape((b * h * w, 3 * k * k))?;
        let z = blocks.matmul(&self.enc)?;
        Ok(z.reshape((b, h, w, LATENT_CHANNELS))?
            .permute((0, 3, 1, 2))?
            .contiguous()?)
    }

    fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = z.dims4()?;
        if c != LATENT_CHANNELS {
            return dim_err(format!("decoder needs {LATENT_CHANNELS} channels, got {c}"));
        }
        let k = LATENT_FACTOR;
        let flat = z
            .to_dtype(self.dec.dtype())?
            .permute((0, 2, 3, 1))?
            .reshape((b * h * w, LATENT_CHANNELS))?;
        let x = flat.matmul(&self.dec)?;
        Ok(x.reshape((b, h, w, 3, k, k))?
            .permute((0, 3, 1, 4, 2, 5))?
            .reshape((b, 3, h * k, w * k))?)
    }
}

/// Encodes one image.
pub fn encode_latent(image: &ImageTensor, codec: &dyn LatentCodec) -> Result<LatentTensor> {
    LatentTensor::new(codec.encode(&image.batched()?)?)
}

/// Decodes the first latent of the batch, clamping into `[-1, 1]`.
pub fn decode_latent(z: &LatentTensor, codec: &dyn LatentCodec) -> Result<ImageTensor> {
    let x = codec.decode(&z.tensor().narrow(0, 0, 1)?)?.squeeze(0)?;
    ImageTensor::clamped(&x.to_dtype(DType::F32)?, ValueRange::Signed)
}
