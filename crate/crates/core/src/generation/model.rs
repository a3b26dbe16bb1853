use candle_core::{Device, Tensor};

use super::condition::GeometricCondition;
use super::denoiser::TinyUNet;
use super::diffusion::{DenoiseConditions, DiffusionSchedule};
use super::latent::{DeskCodec, LatentCodec, LatentTensor};
use super::pseudo::{map_pseudo_words, PatchTransformer, QueryMapper};
use super::text::{
    embed_batch, fuse_and_encode, EncoderInit, TextEncoder, TokenTable, Vocab, RAW_PROMPT,
};
use super::{GenerationConfig, TextMode, PSEUDO_WORDS};
use crate::error::{dim_err, Result};
use crate::params::{Init, Scope};

/// Parameter prefixes, relative to the scope the model was built in.
pub mod prefixes {
    pub const VISUAL: &str = "visual";
    pub const MAPPER: &str = "mapper";
    pub const TOKEN_TABLE: &str = "token_table";
    pub const TEXT_ENCODER: &str = "text_encoder";
    pub const NULL_TEXT: &str = "null_text";
    pub const UNET: &str = "unet";
}

/// Full-resolution inputs for one batch, all `(B, c, H, W)`.
#[derive(Debug, Clone)]
pub struct ConditionInputs<'a> {
    /// Warped garment (or whatever stands in for it in an ablation).
    pub warped: &'a Tensor,
    /// In-shop garment.
    pub garment: &'a Tensor,
    pub agnostic: &'a Tensor,
    pub mask: &'a Tensor,
    pub pose: &'a Tensor,
    pub captions: &'a [&'a str],
}

/// The generation network: frozen visual encoder, token table and text
/// encoder; trainable pseudo-word mapper, null text row and denoiser.
#[derive(Debug, Clone)]
pub struct GenerationModel {
    config: GenerationConfig,
    codec: DeskCodec,
    vocab: Vocab,
    visual: PatchTransformer,
    mapper: QueryMapper,
    tokens: TokenTable,
    text_encoder: TextEncoder,
    null_text: Tensor,
    unet: TinyUNet,
    schedule: DiffusionSchedule,
}

impl GenerationModel {
    pub fn new(vs: &Scope, config: &GenerationConfig) -> Result<Self> {
        config.validate()?;
        let vocab = Vocab::schema();
        let d = config.d_text;
        let [vh, vw] = config.visual_hw;
        Ok(Self {
            codec: DeskCodec::new(vs.dtype())?,
            visual: PatchTransformer::new(
                &vs.pp(prefixes::VISUAL),
                (vh, vw),
                config.visual_patch,
                config.visual_dim,
                config.visual_blocks,
                config.heads,
            )?,
            mapper: QueryMapper::new(&vs.pp(prefixes::MAPPER), config.visual_dim, d, config.heads)?,
            tokens: TokenTable::new(&vs.pp(prefixes::TOKEN_TABLE), &vocab, d)?,
            text_encoder: TextEncoder::new(
                &vs.pp(prefixes::TEXT_ENCODER),
                d,
                PSEUDO_WORDS + config.max_text_len,
                config.text_blocks,
                config.heads,
                EncoderInit::Default,
            )?,
            null_text: vs.pp(prefixes::NULL_TEXT).get(
                "embedding",
                &[d],
                Init::Normal { std: 0.02 },
            )?,
            unet: TinyUNet::new(&vs.pp(prefixes::UNET), &config.unet, d)?,
            schedule: config.schedule()?,
            vocab,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    pub fn codec(&self) -> &DeskCodec {
        &self.codec
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn mapper(&self) -> &QueryMapper {
        &self.mapper
    }

    pub fn unet(&self) -> &TinyUNet {
        &self.unet
    }

    pub fn null_text(&self) -> &Tensor {
        &self.null_text
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    /// Context length seen by the denoiser.
    pub fn context_len(&self) -> usize {
        PSEUDO_WORDS + self.config.max_text_len
    }

    pub fn encode(&self, images: &Tensor) -> Result<LatentTensor> {
        LatentTensor::new(self.codec.encode(images)?)
    }

    pub fn pseudo_words(&self, garment: &Tensor) -> Result<Tensor> {
        map_pseudo_words(garment, &self.visual, &self.mapper)
    }

    /// The null row broadcast over the whole context, all positions valid.
    pub fn null_context(&self, batch: usize) -> Result<(Tensor, Tensor)> {
        let (s, d) = (self.context_len(), self.config.d_text);
        let ctx = self
            .null_text
            .reshape((1, 1, d))?
            .broadcast_as((batch, s, d))?
            .contiguous()?;
        let valid = Tensor::ones((batch, s), ctx.dtype(), &Device::Cpu)?;
        Ok((ctx, valid))
    }

    /// Encoded `[pseudo-words; caption]` under the configured text mode.
    /// `visual_source` is the garment batch the visual encoder reads.
    pub fn context(&self, visual_source: &Tensor, captions: &[&str]) -> Result<(Tensor, Tensor)> {
        let b = visual_source.dim(0)?;
        if captions.len() != b {
            return dim_err(format!("{} captions for a batch of {b}", captions.len()));
        }
        let texts: Vec<&str> = match self.config.text_mode {
            TextMode::None => return self.null_context(b),
            TextMode::Raw => vec![RAW_PROMPT; b],
            TextMode::Structured => captions.to_vec(),
        };
        let pseudo = self.pseudo_words(visual_source)?;
        let (emb, valid) =
            embed_batch(&texts, &self.vocab, &self.tokens, self.config.max_text_len)?;
        fuse_and_encode(&pseudo, &emb, Some(&valid), &self.text_encoder)
    }

    /// Geometric condition and text context for a batch. The flags in the
    /// config pick the garment fed to each path.
    pub fn conditions(&self, inputs: &ConditionInputs<'_>) -> Result<DenoiseConditions> {
        let agnostic = self.encode(inputs.agnostic)?;
        let e_warp = if self.config.warp_in_condition {
            self.encode(inputs.warped)?
        } else {
            LatentTensor::new(agnostic.tensor().zeros_like()?)?
        };
        let geo = GeometricCondition::new(e_warp, agnostic, inputs.mask, inputs.pose)?;
        let visual = if self.config.warp_in_visual {
            inputs.warped
        } else {
            inputs.garment
        };
        let (ctx, valid) = self.context(visual, inputs.captions)?;
        Ok(DenoiseConditions {
            geo,
            ctx,
            ctx_valid: Some(valid),
        })
    }
}
