use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointKind};
use super::config::RunConfig;
use super::data::{prepare_all, Batch, PreparedSample};
use super::train_gen::{stand_in_garments, GenerationStage};
use super::train_warp::{TrainedWarp, TRAIN_DTYPE};
use crate::error::{Error, Result};
use crate::generation::{decode_latent, sample, TextMode};
use crate::metrics::{output_name, EvalMode, PoseScope, GEN_PROVENANCE_FILE};
use crate::params::name_hash;
use crate::semantics::{load_records, BuildOptions, DatasetManifest};
use crate::tensor::ImageTensor;

/// What produced a set of try-on images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Generation fingerprint of the config, shared by every image of a run.
    pub fingerprint: String,
    pub config_fingerprint: String,
    pub generation_checkpoint: String,
    /// `None` when the warp module is disabled.
    pub warp_checkpoint: Option<String>,
    pub seed: u64,
    pub guidance_scale: f64,
    pub steps: usize,
    pub height: usize,
    pub width: usize,
    pub text_mode: TextMode,
}

/// Restored warp and generation networks, ready to sample.
pub struct TryOnPipeline {
    config: RunConfig,
    stage: GenerationStage,
    warp: Option<TrainedWarp>,
    gen_hash: String,
}

impl TryOnPipeline {
    /// Fails when either checkpoint was written under a different config,
    /// or the generator was trained on a different warp.
    pub fn new(
        config: &RunConfig,
        generation: &Checkpoint,
        warp: Option<TrainedWarp>,
    ) -> Result<Self> {
        config.validate()?;
        generation.expect(CheckpointKind::Generation, &config.generation_fingerprint())?;
        let warp = if config.ablation.use_apwam {
            let w = warp.ok_or_else(|| {
                Error::Checkpoint(
                    "a warp checkpoint is required when the warp module is enabled".into(),
                )
            })?;
            let trained_on = generation.meta.get("warp_hash").map(String::as_str);
            if trained_on != Some(w.hash()) {
                return Err(Error::Provenance(format!(
                    "generator was trained on warp {trained_on:?}, given {}",
                    w.hash()
                )));
            }
            Some(w)
        } else {
            None
        };
        let stage = GenerationStage::new(config)?;
        generation.restore_params(&stage.store)?;
        Ok(Self {
            config: config.clone(),
            stage,
            warp,
            gen_hash: generation.content_hash()?,
        })
    }

    pub fn load(config: &RunConfig, generation: &Path, warp: Option<&Path>) -> Result<Self> {
        let warp = warp.map(|p| TrainedWarp::load(config, p)).transpose()?;
        Self::new(config, &Checkpoint::load(generation)?, warp)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn steps(&self) -> usize {
        match self.config.inference.steps {
            0 => self.config.generation.timesteps,
            s => s,
        }
    }

    pub fn provenance(&self, seed: u64) -> Provenance {
        Provenance {
            fingerprint: self.config.generation_fingerprint(),
            config_fingerprint: self.config.fingerprint(),
            generation_checkpoint: self.gen_hash.clone(),
            warp_checkpoint: self.warp.as_ref().map(|w| w.hash().to_string()),
            seed,
            guidance_scale: self.config.inference.guidance_scale,
            steps: self.steps(),
            height: self.config.height,
            width: self.config.width,
            text_mode: self.stage.model.config().text_mode,
        }
    }

    /// Dresses `person` in the garment (and caption) of `garment`. Both
    /// must be prepared at the configured resolution.
    pub fn try_on(
        &self,
        person: &PreparedSample,
        garment: &PreparedSample,
        seed: u64,
    ) -> Result<ImageTensor> {
        let (_, h, w) = person.person.dims3()?;
        if (h, w) != (self.config.height, self.config.width)
            || garment.garment.dims() != person.person.dims()
        {
            return Err(Error::Dimension(format!(
                "inputs must be {}x{}, got person {:?} and garment {:?}",
                self.config.height,
                self.config.width,
                person.person.dims(),
                garment.garment.dims()
            )));
        }
        let mut dressed = person.clone();
        dressed.garment = garment.garment.clone();
        dressed.caption = garment.caption.clone();
        let stand_in = if self.warp.is_some() {
            stand_in_garments(
                std::slice::from_ref(&dressed),
                &self.config,
                self.warp.as_ref(),
            )?
            .remove(0)
        } else {
            // no warp: the flat garment, cut to the try-on region
            dressed.garment.broadcast_mul(&dressed.mask)?
        };
        let batch = Batch::new(&[&dressed])?;
        let cond = self.stage.conditions(&batch, &stand_in.unsqueeze(0)?)?;
        let uncond = cond.nulled(self.stage.model.null_text())?;
        let (timesteps, schedule) = self.stage.model.schedule().respaced(self.steps())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = sample(
            self.stage.model.unet(),
            &cond,
            &uncond,
            &schedule,
            &timesteps,
            self.config.inference.guidance_scale,
            &mut rng,
        )?;
        decode_latent(&z, self.stage.model.codec())
    }
}

/// Per-record seed: the run seed mixed with the output name, so an image
/// does not depend on which other records are generated with it.
pub fn record_seed(seed: u64, name: &str) -> u64 {
    seed ^ name_hash(name)
}

/// Generates one image per manifest record in `scope` into `out_dir`, named
/// by [`output_name`], and writes the provenance file next to them.
/// Unpaired mode dresses each person in the garment listed for it.
pub fn infer_manifest(
    pipeline: &TryOnPipeline,
    root: &Path,
    manifest: &DatasetManifest,
    mode: EvalMode,
    scope: PoseScope,
    out_dir: &Path,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let c = pipeline.config();
    let options = BuildOptions {
        height: c.height,
        width: c.width,
        resize: true,
    };
    let records = load_records(root, manifest, &options)?;
    let prepared = prepare_all(&records, c.height, c.width, TRAIN_DTYPE)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (i, r) in manifest.records.iter().enumerate() {
        if !scope.includes(r.pose_id) {
            continue;
        }
        let g = match mode {
            EvalMode::Paired => i,
            EvalMode::Unpaired => {
                let dir = r.unpaired_garment.rsplit_once('/').map_or("", |(d, _)| d);
                manifest
                    .records
                    .iter()
                    .position(|o| o.dir == dir)
                    .ok_or_else(|| {
                        Error::Value(format!(
                            "unpaired garment `{}` is not in the manifest",
                            r.unpaired_garment
                        ))
                    })?
            }
        };
        let name = output_name(r);
        let img = pipeline.try_on(&prepared[i], &prepared[g], record_seed(seed, &name))?;
        let path = out_dir.join(&name);
        img.save_png(&path)?;
        written.push(path);
    }
    let mut prov = serde_json::to_string_pretty(&pipeline.provenance(seed))?;
    prov.push('\n');
    std::fs::write(out_dir.join(GEN_PROVENANCE_FILE), prov)?;
    Ok(written)
}
