use candle_core::{DType, Tensor};

use crate::error::{arg_err, Result};
use crate::semantics::labels::{self, TRY_ON_REGION};
use crate::semantics::SampleRecord;
use crate::tensor::{ImageTensor, ValueRange};
use crate::warp::person_input;

/// One record as training tensors at a fixed resolution, all `(c, H, W)`
/// in `[-1, 1]` except the binary mask.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub subject_id: String,
    pub pose_id: u8,
    pub person: Tensor,
    pub garment: Tensor,
    /// Agnostic RGB, dense pose and one-hot parse: the warp's person input.
    pub person_input: Tensor,
    pub agnostic: Tensor,
    pub dense_pose: Tensor,
    /// Try-on region, `(1, H, W)`.
    pub mask: Tensor,
    /// Upper-garment label of the person, `(1, H, W)`.
    pub garment_mask: Tensor,
    /// Person pixels under `garment_mask`, zero elsewhere.
    pub garment_region: Tensor,
    pub caption: String,
}

fn resized(img: &ImageTensor, h: usize, w: usize) -> Result<ImageTensor> {
    img.resized(h, w)?.with_range(ValueRange::Signed)
}

impl PreparedSample {
    pub fn new(record: &SampleRecord, height: usize, width: usize, dtype: DType) -> Result<Self> {
        let parse = record.parse.resized(height, width)?;
        let person_img = resized(&record.person_image, height, width)?;
        let agnostic_img = resized(&record.agnostic, height, width)?;
        let pose_img = resized(&record.dense_pose, height, width)?;
        let person = person_img.tensor().to_dtype(dtype)?;
        let region = parse.mask_of(&[labels::UPPER_GARMENT])?.to_dtype(dtype)?;
        Ok(Self {
            subject_id: record.subject_id.clone(),
            pose_id: record.pose_id,
            garment_region: person.broadcast_mul(&region)?,
            garment_mask: region,
            person,
            garment: resized(&record.garment_image, height, width)?
                .tensor()
                .to_dtype(dtype)?,
            person_input: person_input(&agnostic_img, &pose_img, &parse, dtype)?.squeeze(0)?,
            agnostic: agnostic_img.tensor().to_dtype(dtype)?,
            dense_pose: pose_img.tensor().to_dtype(dtype)?,
            mask: parse.mask_of(&TRY_ON_REGION)?.to_dtype(dtype)?,
            caption: record.caption.text.clone(),
        })
    }
}

pub fn prepare_all(
    records: &[SampleRecord],
    height: usize,
    width: usize,
    dtype: DType,
) -> Result<Vec<PreparedSample>> {
    records
        .iter()
        .map(|r| PreparedSample::new(r, height, width, dtype))
        .collect()
}

/// A stacked batch of prepared samples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub person: Tensor,
    pub garment: Tensor,
    pub person_input: Tensor,
    pub agnostic: Tensor,
    pub dense_pose: Tensor,
    pub mask: Tensor,
    pub garment_mask: Tensor,
    pub garment_region: Tensor,
    pub captions: Vec<String>,
}

impl Batch {
    pub fn new(samples: &[&PreparedSample]) -> Result<Self> {
        if samples.is_empty() {
            return arg_err("empty batch");
        }
        let stack = |f: fn(&PreparedSample) -> &Tensor| -> Result<Tensor> {
            Ok(Tensor::stack(
                &samples.iter().map(|s| f(s)).collect::<Vec<_>>(),
                0,
            )?)
        };
        Ok(Self {
            person: stack(|s| &s.person)?,
            garment: stack(|s| &s.garment)?,
            person_input: stack(|s| &s.person_input)?,
            agnostic: stack(|s| &s.agnostic)?,
            dense_pose: stack(|s| &s.dense_pose)?,
            mask: stack(|s| &s.mask)?,
            garment_mask: stack(|s| &s.garment_mask)?,
            garment_region: stack(|s| &s.garment_region)?,
            captions: samples.iter().map(|s| s.caption.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    pub fn caption_refs(&self) -> Vec<&str> {
        self.captions.iter().map(String::as_str).collect()
    }
}

/// Indices of one training batch: `min(batch, n)` distinct records.
pub fn batch_indices<R: rand::Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<usize> {
    rand::seq::index::sample(rng, n, batch.min(n)).into_vec()
}
