use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use candle_core::{Device, Tensor};
use regex::Regex;

use super::PSEUDO_WORDS;
use crate::error::{dim_err, Error, Result};
use crate::nn::{LayerInit, TransformerBlock};
use crate::params::{Init, Scope};
use crate::semantics::{
    Collar, Fit, Neckline, ShirtLength, Sleeve, SAMPLE_COLORS, SAMPLE_PATTERNS,
};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

/// Prompt used when structured captions are switched off.
pub const RAW_PROMPT: &str = "a photo of a model wearing a top";

const TEMPLATE_WORDS: &[&str] = &["a", "top", "with", "neckline", "length"];

/// Word-level vocabulary: padding, unknown, then sorted words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new<I: IntoIterator<Item = String>>(words: I) -> Self {
        let set: BTreeSet<String> = words.into_iter().filter(|w| w != PAD && w != UNK).collect();
        let words: Vec<String> = [PAD.to_string(), UNK.to_string()]
            .into_iter()
            .chain(set)
            .collect();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Self { words, index }
    }

    /// Attribute closed sets, sample pattern/color tokens, template and raw
    /// prompt words.
    pub fn schema() -> Self {
        let mut words = Vec::new();
        let names = [
            Fit::NAMES,
            Neckline::NAMES,
            Collar::NAMES,
            Sleeve::NAMES,
            ShirtLength::NAMES,
        ];
        for set in names {
            for n in set {
                words.extend(tokenize(n));
            }
        }
        for w in SAMPLE_PATTERNS
            .iter()
            .chain(SAMPLE_COLORS)
            .chain(TEMPLATE_WORDS)
        {
            words.push(w.to_string());
        }
        words.extend(tokenize(RAW_PROMPT));
        Self::new(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn unk_id(&self) -> u32 {
        1
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(self.unk_id())
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|w| self.id(w)).collect()
    }
}

/// Lowercase words; hyphenated compounds stay whole, punctuation is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"[a-z0-9]+(?:-[a-z0-9]+)*").expect("static regex"));
    let lower = text.to_lowercase();
    re.find_iter(&lower)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Embedding lookup table `(vocab, d_text)`.
#[derive(Debug, Clone)]
pub struct TokenTable {
    weight: Tensor,
}

impl TokenTable {
    pub fn new(vs: &Scope, vocab: &Vocab, d_text: usize) -> Result<Self> {
        Ok(Self {
            weight: vs.get("weight", &[vocab.len(), d_text], Init::Normal { std: 1.0 })?,
        })
    }

    pub fn dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn lookup(&self, ids: &[u32]) -> Result<Tensor> {
        if ids.is_empty() {
            return Ok(Tensor::zeros(
                (0, self.dim()),
                self.weight.dtype(),
                &Device::Cpu,
            )?);
        }
        let idx = Tensor::from_vec(ids.to_vec(), ids.len(), &Device::Cpu)?;
        Ok(self.weight.index_select(&idx, 0)?)
    }
}

/// Embedded caption. `embeddings` holds only real tokens; `padded` and
/// `valid` extend it to the fixed maximum length.
#[derive(Debug, Clone)]
pub struct TextTokens {
    pub ids: Vec<u32>,
    pub embeddings: Tensor,
    pub padded: Tensor,
    pub valid: Tensor,
}

impl TextTokens {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Tokenizes, truncates to `max_len`, and looks up embeddings.
pub fn embed_text(
    caption: &str,
    vocab: &Vocab,
    table: &TokenTable,
    max_len: usize,
) -> Result<TextTokens> {
    let mut ids = vocab.encode(caption);
    ids.truncate(max_len);
    let embeddings = table.lookup(&ids)?;
    let mut padded_ids = ids.clone();
    padded_ids.resize(max_len, vocab.pad_id());
    let padded = table.lookup(&padded_ids)?;
    let valid: Vec<f32> = (0..max_len)
        .map(|i| if i < ids.len() { 1.0 } else { 0.0 })
        .collect();
    let valid = Tensor::from_vec(valid, max_len, &Device::Cpu)?.to_dtype(padded.dtype())?;
    Ok(TextTokens {
        ids,
        embeddings,
        padded,
        valid,
    })
}

/// `(B, max_len, d)` padded embeddings and `(B, max_len)` validity.
pub fn embed_batch(
    captions: &[&str],
    vocab: &Vocab,
    table: &TokenTable,
    max_len: usize,
) -> Result<(Tensor, Tensor)> {
    let mut e = Vec::with_capacity(captions.len());
    let mut v = Vec::with_capacity(captions.len());
    for c in captions {
        let t = embed_text(c, vocab, table, max_len)?;
        e.push(t.padded);
        v.push(t.valid);
    }
    Ok((Tensor::stack(&e, 0)?, Tensor::stack(&v, 0)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderInit {
    /// Zero residual branches and zero position table: the identity map.
    Identity,
    /// Sinusoidal positions and random blocks.
    Default,
}

/// Sequence encoder over `[pseudo-words; caption tokens]`.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    positions: Tensor,
    blocks: Vec<TransformerBlock>,
}

fn sinusoid(len: usize, dim: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(len * dim);
    for p in 0..len {
        for i in 0..dim {
            let k = (i / 2) as f64;
            let a = p as f64 / 10000f64.powf(2.0 * k / dim as f64);
            v.push(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    v
}

impl TextEncoder {
    pub fn new(
        vs: &Scope,
        d_text: usize,
        max_len: usize,
        blocks: usize,
        heads: usize,
        init: EncoderInit,
    ) -> Result<Self> {
        let branch = match init {
            EncoderInit::Identity => LayerInit::Zero,
            EncoderInit::Default => LayerInit::Default,
        };
        let positions = vs.get("positions", &[max_len, d_text], Init::Zeros)?;
        let positions = if init == EncoderInit::Default {
            let table =
                Tensor::from_vec(sinusoid(max_len, d_text), (max_len, d_text), &Device::Cpu)?
                    .to_dtype(positions.dtype())?;
            let name = vs.full_name("positions");
            let var = vs.store().var(&name).expect("just created");
            var.set(&table)?;
            var.as_tensor().clone()
        } else {
            positions
        };
        Ok(Self {
            positions,
            blocks: (0..blocks)
                .map(|i| TransformerBlock::new(&vs.pp(format!("block{i}")), d_text, heads, branch))
                .collect::<Result<_>>()?,
        })
    }

    pub fn max_len(&self) -> usize {
        self.positions.dims()[0]
    }

    /// `y: (B, S, d)`, `valid: (B, S)`.
    pub fn forward(&self, y: &Tensor, valid: Option<&Tensor>) -> Result<Tensor> {
        let (_, s, d) = y.dims3()?;
        if s > self.max_len() || d != self.positions.dims()[1] {
            return dim_err(format!(
                "sequence ({s}, {d}) exceeds encoder capacity {:?}",
                self.positions.dims()
            ));
        }
        let mut h = y.broadcast_add(&self.positions.narrow(0, 0, s)?)?;
        for b in &self.blocks {
            h = b.forward(&h, valid)?;
        }
        Ok(h)
    }
}

/// Concatenates pseudo-words and caption tokens (pseudo-words first) and
/// runs the text encoder. Returns the encoded sequence and its validity.
pub fn fuse_and_encode(
    v_pseudo: &Tensor,
    t_feature: &Tensor,
    t_valid: Option<&Tensor>,
    encoder: &TextEncoder,
) -> Result<(Tensor, Tensor)> {
    let (b, p, d) = v_pseudo.dims3()?;
    let (tb, n, td) = t_feature.dims3()?;
    if p != PSEUDO_WORDS {
        return Err(Error::Contract(format!(
            "expected {PSEUDO_WORDS} pseudo-words, got {p}"
        )));
    }
    if td != d || tb != b {
        return dim_err(format!(
            "pseudo-words {:?} vs caption tokens {:?}",
            v_pseudo.dims(),
            t_feature.dims()
        ));
    }
    let dtype = v_pseudo.dtype();
    let ones = Tensor::ones((b, p), dtype, &Device::Cpu)?;
    let t_valid = match t_valid {
        Some(v) => {
            if v.dims() != [b, n] {
                return dim_err(format!("caption mask {:?} vs tokens ({b}, {n})", v.dims()));
            }
            v.to_dtype(dtype)?
        }
        None => Tensor::ones((b, n), dtype, &Device::Cpu)?,
    };
    let y = Tensor::cat(&[v_pseudo, &t_feature.to_dtype(dtype)?], 1)?;
    let valid = Tensor::cat(&[&ones, &t_valid], 1)?;
    let out = encoder.forward(&y, Some(&valid))?;
    Ok((out, valid))
}
