use candle_core::{Module, Tensor};

use super::PSEUDO_WORDS;
use crate::error::{dim_err, Error, Result};
use crate::nn::{resize_bilinear, Attention, LayerInit, LayerNorm, Linear, TransformerBlock};
use crate::params::{Init, Scope};

/// Turns a garment image batch `(B, 3, H, W)` into visual tokens `(B, n, d_vis)`.
pub trait VisualEncoder: Send + Sync {
    fn encode(&self, image: &Tensor) -> Result<Tensor>;
}

/// Maps visual tokens to pseudo-word embeddings `(B, 16, d_text)`.
pub trait PseudoWordMapper: Send + Sync {
    fn map(&self, visual: &Tensor) -> Result<Tensor>;
}

/// Resize to a fixed input size, cut into patches, embed linearly and run a
/// small transformer.
#[derive(Debug, Clone)]
pub struct PatchTransformer {
    input_hw: (usize, usize),
    patch: usize,
    embed: Linear,
    positions: Tensor,
    blocks: Vec<TransformerBlock>,
}

impl PatchTransformer {
    pub fn new(
        vs: &Scope,
        input_hw: (usize, usize),
        patch: usize,
        dim: usize,
        blocks: usize,
        heads: usize,
    ) -> Result<Self> {
        if input_hw.0 % patch != 0 || input_hw.1 % patch != 0 {
            return dim_err(format!(
                "input {input_hw:?} is not a multiple of the {patch}px patch"
            ));
        }
        let n = (input_hw.0 / patch) * (input_hw.1 / patch);
        Ok(Self {
            input_hw,
            patch,
            embed: Linear::new(&vs.pp("embed"), 3 * patch * patch, dim, LayerInit::Default)?,
            positions: vs.get("positions", &[n, dim], Init::Normal { std: 0.5 })?,
            blocks: (0..blocks)
                .map(|i| {
                    TransformerBlock::new(
                        &vs.pp(format!("block{i}")),
                        dim,
                        heads,
                        LayerInit::Default,
                    )
                })
                .collect::<Result<_>>()?,
        })
    }

    pub fn tokens(&self) -> usize {
        self.positions.dims()[0]
    }
}

impl VisualEncoder for PatchTransformer {
    fn encode(&self, image: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = image.dims4()?;
        if c != 3 {
            return dim_err(format!("visual encoder expects RGB, got {c} channels"));
        }
        let (h, w) = self.input_hw;
        let p = self.patch;
        let x = resize_bilinear(&image.to_dtype(self.positions.dtype())?, h, w)?;
        let patches = x
            .reshape((b, 3, h / p, p, w / p, p))?
            .permute((0, 2, 4, 1, 3, 5))?
            .reshape((b, (h / p) * (w / p), 3 * p * p))?;
        let mut t = self
            .embed
            .forward(&patches)?
            .broadcast_add(&self.positions)?;
        for blk in &self.blocks {
            t = blk.forward(&t, None)?;
        }
        Ok(t)
    }
}

/// Learned queries read the visual tokens through cross-attention, then a
/// transformer block, a feed-forward layer and a final linear projection.
#[derive(Debug, Clone)]
pub struct QueryMapper {
    in_proj: Linear,
    queries: Tensor,
    cross: Attention,
    norm: LayerNorm,
    block: TransformerBlock,
    ff1: Linear,
    ff2: Linear,
    out: Linear,
}

impl QueryMapper {
    pub fn new(vs: &Scope, d_vis: usize, d_text: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            in_proj: Linear::new(&vs.pp("in_proj"), d_vis, d_text, LayerInit::Default)?,
            queries: vs.get(
                "queries",
                &[PSEUDO_WORDS, d_text],
                Init::Normal { std: 0.5 },
            )?,
            cross: Attention::new(&vs.pp("cross"), d_text, d_text, heads, LayerInit::Default)?,
            norm: LayerNorm::new(&vs.pp("norm"), d_text)?,
            block: TransformerBlock::new(&vs.pp("block"), d_text, heads, LayerInit::Default)?,
            ff1: Linear::new(&vs.pp("ff1"), d_text, 2 * d_text, LayerInit::Default)?,
            ff2: Linear::new(&vs.pp("ff2"), 2 * d_text, d_text, LayerInit::Default)?,
            out: Linear::new(&vs.pp("out"), d_text, d_text, LayerInit::Default)?,
        })
    }

    /// The final projection, whose weights are the usual gradient probe.
    pub fn output_layer(&self) -> &Linear {
        &self.out
    }
}

impl PseudoWordMapper for QueryMapper {
    fn map(&self, visual: &Tensor) -> Result<Tensor> {
        let b = visual.dim(0)?;
        let v = self.in_proj.forward(visual)?;
        let q = self
            .queries
            .unsqueeze(0)?
            .broadcast_as((b, PSEUDO_WORDS, self.queries.dim(1)?))?
            .contiguous()?;
        let x = (&q + self.cross.forward(&self.norm.forward(&q)?, &v, None)?)?;
        let x = self.block.forward(&x, None)?;
        let x = (&x + self.ff2.forward(&self.ff1.forward(&x)?.gelu()?)?)?;
        Ok(self.out.forward(&x)?)
    }
}

/// Visual tokens, then pseudo-words. Fails with a contract error if the
/// mapper does not return exactly 16 tokens.
pub fn map_pseudo_words(
    garment: &Tensor,
    encoder: &dyn VisualEncoder,
    mapper: &dyn PseudoWordMapper,
) -> Result<Tensor> {
    let tokens = encoder.encode(garment)?;
    let words = mapper.map(&tokens)?;
    let (b, n, _) = words.dims3()?;
    if n != PSEUDO_WORDS || b != garment.dim(0)? {
        return Err(Error::Contract(format!(
            "mapper returned {:?}; expected ({}, {PSEUDO_WORDS}, d)",
            words.dims(),
            garment.dim(0)?
        )));
    }
    Ok(words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use candle_core::{DType, Device};

    struct Short;

    impl PseudoWordMapper for Short {
        fn map(&self, visual: &Tensor) -> Result<Tensor> {
            Ok(visual.narrow(1, 0, 3)?)
        }
    }

    fn encoder(store: &ParamStore) -> PatchTransformer {
        PatchTransformer::new(&store.root().pp("visual"), (32, 24), 8, 16, 2, 2).unwrap()
    }

    #[test]
    fn sixteen_rows_and_deterministic() {
        let run = || {
            let store = ParamStore::new(4, DType::F32);
            let enc = encoder(&store);
            let mapper = QueryMapper::new(&store.root().pp("mapper"), 16, 12, 2).unwrap();
            let img = Tensor::arange(0u32, 2 * 3 * 64 * 48, &Device::Cpu)
                .unwrap()
                .to_dtype(DType::F32)
                .unwrap()
                .reshape((2, 3, 64, 48))
                .unwrap();
            let img = ((img * 0.37).unwrap().sin()).unwrap();
            map_pseudo_words(&img, &enc, &mapper).unwrap()
        };
        let a = run();
        assert_eq!(a.dims(), &[2, 16, 12]);
        let d = (a - run())
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn wrong_token_count_is_a_contract_error() {
        let store = ParamStore::new(4, DType::F32);
        let img = Tensor::zeros((1, 3, 32, 24), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(
            map_pseudo_words(&img, &encoder(&store), &Short),
            Err(Error::Contract(_))
        ));
    }
}
