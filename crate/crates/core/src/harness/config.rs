use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generation::{GenerationConfig, TextMode, UNetConfig};
use crate::warp::{WarpConfig, WarpLossWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarpTrainConfig {
    pub network: WarpConfig,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    /// Epoch after which the learning rate decays linearly to zero.
    pub decay_start: usize,
    pub loss: WarpLossWeights,
    /// Optimizer steps per epoch; `0` means one pass over the records.
    pub steps_per_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvfConfig {
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgagConfig {
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Per-condition drop probability during training.
    pub cond_dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    /// Reverse steps; `0` means the full schedule.
    pub steps: usize,
    pub guidance_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    pub mre_deformable: bool,
    pub dfen_deformable: bool,
    pub text_mode: TextMode,
    /// Warp the garment before generation; otherwise the unwarped garment
    /// stands in at inference and the on-person garment during training.
    pub use_apwam: bool,
    /// Structured captions; otherwise the text pathway is nulled.
    pub use_srcm: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            mre_deformable: true,
            dfen_deformable: true,
            text_mode: TextMode::Structured,
            use_apwam: true,
            use_srcm: true,
        }
    }
}

impl AblationFlags {
    /// Text mode that actually reaches the model.
    pub fn effective_text_mode(&self) -> TextMode {
        if self.use_srcm {
            self.text_mode
        } else {
            TextMode::None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub warp: WarpTrainConfig,
    pub csvf: CsvfConfig,
    pub dgag: DgagConfig,
    pub generation: GenerationConfig,
    pub inference: InferenceConfig,
    pub ablation: AblationFlags,
}

impl RunConfig {
    /// Published hyperparameters at full resolution.
    pub fn full() -> Self {
        Self {
            seed: 0,
            height: 512,
            width: 384,
            batch_size: 4,
            clip_norm: 1.0,
            warp: WarpTrainConfig {
                network: WarpConfig::default(),
                lr: 5e-5,
                beta1: 0.5,
                beta2: 0.999,
                epochs: 100,
                decay_start: 50,
                loss: WarpLossWeights::default(),
                steps_per_epoch: 0,
            },
            csvf: CsvfConfig {
                steps: 150_000,
                lr: 1e-5,
                beta1: 0.9,
                beta2: 0.999,
                weight_decay: 0.01,
            },
            dgag: DgagConfig {
                steps: 150_000,
                lr: 1e-5,
                beta1: 0.9,
                beta2: 0.999,
                cond_dropout: 0.2,
            },
            generation: GenerationConfig {
                timesteps: 1000,
                ..GenerationConfig::default()
            },
            inference: InferenceConfig {
                steps: 0,
                guidance_scale: 2.0,
            },
            ablation: AblationFlags::default(),
        }
    }

    /// Small enough to train and evaluate on a laptop CPU in seconds.
    pub fn desk() -> Self {
        let full = Self::full();
        Self {
            height: 64,
            width: 48,
            warp: WarpTrainConfig {
                network: WarpConfig {
                    level_channels: vec![8, 16, 16, 16],
                    cascade_depth: 4,
                    corr_radius: 2,
                    head_channels: 16,
                    ..WarpConfig::default()
                },
                lr: 1e-3,
                epochs: 20,
                decay_start: 10,
                steps_per_epoch: 5,
                ..full.warp
            },
            csvf: CsvfConfig {
                steps: 20,
                lr: 1e-3,
                ..full.csvf
            },
            dgag: DgagConfig {
                steps: 200,
                lr: 2e-3,
                ..full.dgag
            },
            generation: GenerationConfig {
                d_text: 32,
                timesteps: 50,
                unet: UNetConfig {
                    channels: [32, 64],
                    heads: 2,
                    groups: 8,
                    time_dim: 32,
                },
                visual_hw: [32, 24],
                visual_dim: 32,
                heads: 2,
                ..GenerationConfig::default()
            },
            inference: InferenceConfig {
                steps: 0,
                guidance_scale: 2.0,
            },
            ..full
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Config(format!(
                "unknown preset `{name}` (expected desk or full)"
            ))),
        }
    }

    /// Parses a TOML file. An optional top-level `preset = "desk" | "full"`
    /// selects the base values (default `full`); every other key overrides
    /// the base.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut over: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let preset = match over.remove("preset") {
            None => "full".to_string(),
            Some(toml::Value::String(s)) => s,
            Some(v) => return Err(Error::Config(format!("preset must be a string, got {v}"))),
        };
        let base = Self::preset(&preset)?;
        let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut table, over, "")?;
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Copies the ablation flags into the sub-configs they control, so that
    /// the nested fields never disagree with `ablation`. The text mode is
    /// `none` whenever structured captions are off.
    pub fn normalized(&self) -> Self {
        let mut c = self.clone();
        c.warp.network.mre_deformable = c.ablation.mre_deformable;
        c.warp.network.dfen_deformable = c.ablation.dfen_deformable;
        c.ablation.text_mode = c.ablation.effective_text_mode();
        c.generation.text_mode = c.ablation.text_mode;
        c
    }

    pub fn warp_network(&self) -> WarpConfig {
        self.normalized().warp.network
    }

    pub fn generation_model(&self) -> GenerationConfig {
        self.normalized().generation
    }

    /// Canonical TOML of the normalized config.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.normalized()).expect("plain data")
    }

    /// SHA-256 of the normalized config's JSON form.
    pub fn fingerprint(&self) -> String {
        digest(&self.normalized())
    }

    /// Fingerprint of the fields that shape a warp checkpoint.
    pub fn warp_fingerprint(&self) -> String {
        let c = self.normalized();
        digest(&serde_json::json!({
            "seed": c.seed,
            "height": c.height,
            "width": c.width,
            "batch_size": c.batch_size,
            "clip_norm": c.clip_norm,
            "warp": c.warp,
        }))
    }

    /// Fingerprint of the fields that shape a generation checkpoint: all
    /// but the inference settings.
    pub fn generation_fingerprint(&self) -> String {
        let mut c = self.normalized();
        c.inference = Self::full().inference;
        digest(&c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.height == 0 || self.width == 0 || self.height % 8 != 0 || self.width % 8 != 0 {
            return bad("height and width must be positive multiples of 8");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be non-negative");
        }
        let w = &self.warp;
        if !(w.lr > 0.0) || w.epochs == 0 || w.decay_start > w.epochs {
            return bad("warp: lr and epochs must be positive and decay_start at most epochs");
        }
        for (name, b) in [
            ("warp.beta1", w.beta1),
            ("warp.beta2", w.beta2),
            ("csvf.beta1", self.csvf.beta1),
            ("csvf.beta2", self.csvf.beta2),
            ("dgag.beta1", self.dgag.beta1),
            ("dgag.beta2", self.dgag.beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.csvf.lr > 0.0) || !(self.dgag.lr > 0.0) || !(self.csvf.weight_decay >= 0.0) {
            return bad("csvf/dgag learning rates must be positive and weight decay non-negative");
        }
        if !(0.0..=1.0).contains(&self.dgag.cond_dropout) {
            return bad("dgag.cond_dropout must lie in [0, 1]");
        }
        if !self.inference.guidance_scale.is_finite()
            || self.inference.steps > self.generation.timesteps
        {
            return bad(
                "inference: guidance_scale must be finite and steps at most generation.timesteps",
            );
        }
        w.loss
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.warp_network()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.generation_model()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

fn digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("plain data");
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn merge(base: &mut toml::Table, over: toml::Table, path: &str) -> Result<()> {
    for (k, v) in over {
        let key = if path.is_empty() {
            k.clone()
        } else {
            format!("{path}.{k}")
        };
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &key)?,
            (Some(slot), v) => *slot = v,
            (None, _) => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
    }
    Ok(())
}

/// Learning rate for a 0-based epoch: `base` through `decay_start`, then
/// linear down to zero at `total`.
pub fn warp_learning_rate(base: f64, epoch: f64, decay_start: f64, total: f64) -> f64 {
    if epoch <= decay_start {
        base
    } else if epoch >= total {
        0.0
    } else {
        base * (total - epoch) / (total - decay_start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_schedule_points() {
        let lr = |e: f64| warp_learning_rate(5e-5, e, 50.0, 100.0);
        assert_eq!(lr(0.0), 5e-5);
        assert_eq!(lr(50.0), 5e-5);
        assert!((lr(75.0) - 2.5e-5).abs() < 1e-18);
        assert_eq!(lr(100.0), 0.0);
    }

    #[test]
    fn presets_validate() {
        RunConfig::full().validate().unwrap();
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let c = RunConfig::desk();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back.fingerprint(), c.fingerprint());
        let o = RunConfig::from_toml("preset = \"desk\"\nseed = 9\n[warp]\nlr = 0.01\n").unwrap();
        assert_eq!((o.seed, o.warp.lr, o.height), (9, 0.01, 64));
        assert!(RunConfig::from_toml("sed = 1").is_err());
        assert!(RunConfig::from_toml("preset = \"huge\"").is_err());
    }

    #[test]
    fn fingerprint_ignores_shadowed_fields() {
        let a = RunConfig::desk();
        let mut b = a.clone();
        b.warp.network.mre_deformable = !b.warp.network.mre_deformable;
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.ablation.mre_deformable = !b.ablation.mre_deformable;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn stage_fingerprints_track_their_fields() {
        let a = RunConfig::desk();
        let mut b = a.clone();
        b.inference.guidance_scale = 3.0;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.generation_fingerprint(), b.generation_fingerprint());
        b.ablation.text_mode = TextMode::Raw;
        assert_ne!(a.generation_fingerprint(), b.generation_fingerprint());
        assert_eq!(a.warp_fingerprint(), b.warp_fingerprint());
        b.ablation.dfen_deformable = false;
        assert_ne!(a.warp_fingerprint(), b.warp_fingerprint());
    }
}
