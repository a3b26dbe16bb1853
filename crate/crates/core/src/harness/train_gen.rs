use std::path::PathBuf;

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointKind};
use super::config::RunConfig;
use super::data::{batch_indices, Batch, PreparedSample};
use super::log::JsonLog;
use super::optim::{Adam, AdamConfig, TrainRng};
use super::train_warp::{TrainedWarp, TRAIN_DTYPE};
use crate::error::{arg_err, Error, Result};
use crate::generation::{
    diffusion_loss, diffusion_loss_with, mask_conditions, prefixes, ConditionDrop, ConditionInputs,
    DenoiseConditions, GenerationModel, LatentTensor, NoiseDraw, TextMode,
};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenPhase {
    /// Pseudo-word mapper against the frozen denoiser.
    Csvf,
    /// Denoiser and null text row, with condition dropout.
    Dgag,
}

impl GenPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            GenPhase::Csvf => "csvf",
            GenPhase::Dgag => "dgag",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub text: Vec<bool>,
    pub warp: Vec<bool>,
    pub pose: Vec<bool>,
}

impl From<&ConditionDrop> for DropRecord {
    fn from(d: &ConditionDrop) -> Self {
        Self {
            text: d.text.clone(),
            warp: d.warp.clone(),
            pose: d.pose.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenLogRecord {
    pub phase: GenPhase,
    /// Global step, counted across both phases from 1.
    pub step: u64,
    pub lr: f64,
    pub seed: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub text_mode: TextMode,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub drop: Option<DropRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct GenTrainOptions {
    pub resume: Option<PathBuf>,
    /// Stop once this many global steps are complete.
    pub stop_after: Option<usize>,
    pub log: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

pub struct GenRun {
    pub checkpoint: Checkpoint,
    pub hash: String,
    pub log: Vec<GenLogRecord>,
    /// Fixed-draw loss over every sample, before and after this run.
    pub eval_loss: (f64, f64),
}

/// The generation model and its parameter store.
pub struct GenerationStage {
    pub store: ParamStore,
    pub model: GenerationModel,
}

impl GenerationStage {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let store = ParamStore::new(config.seed, TRAIN_DTYPE);
        let model = GenerationModel::new(&store.root(), &config.generation_model())?;
        Ok(Self { store, model })
    }

    /// Conditions for a batch, with `stand_in` as the warped garment.
    pub fn conditions(&self, batch: &Batch, stand_in: &Tensor) -> Result<DenoiseConditions> {
        let captions = batch.caption_refs();
        self.model.conditions(&ConditionInputs {
            warped: stand_in,
            garment: &batch.garment,
            agnostic: &batch.agnostic,
            mask: &batch.mask,
            pose: &batch.dense_pose,
            captions: &captions,
        })
    }
}

const WARP_HASH_KEY: &str = "warp_hash";
const PHASE_KEY: &str = "phase";

/// The garment fed to the warp path for every sample: the warp network's
/// output when the warp is in use, the on-person garment otherwise.
pub fn stand_in_garments(
    samples: &[PreparedSample],
    config: &RunConfig,
    warp: Option<&TrainedWarp>,
) -> Result<Vec<Tensor>> {
    match (config.ablation.use_apwam, warp) {
        (true, None) => Err(Error::Checkpoint(
            "a warp checkpoint is required when the warp module is enabled".into(),
        )),
        (true, Some(w)) => samples
            .iter()
            .map(|s| {
                let out = w.warp(
                    &s.garment.unsqueeze(0)?,
                    &s.person_input.unsqueeze(0)?,
                    &s.mask.unsqueeze(0)?,
                )?;
                Ok(out.squeeze(0)?)
            })
            .collect(),
        (false, _) => Ok(samples.iter().map(|s| s.garment_region.clone()).collect()),
    }
}

fn pick<'a>(
    samples: &'a [PreparedSample],
    stand_in: &[Tensor],
    idx: &[usize],
) -> Result<(Batch, Tensor)> {
    let picked: Vec<&'a PreparedSample> = idx.iter().map(|&i| &samples[i]).collect();
    let s = Tensor::stack(
        &idx.iter().map(|&i| stand_in[i].clone()).collect::<Vec<_>>(),
        0,
    )?;
    Ok((Batch::new(&picked)?, s))
}

/// Mean diffusion loss over every sample with noise and timesteps drawn
/// from a fixed seed, no dropout.
pub fn fixed_draw_loss(
    stage: &GenerationStage,
    samples: &[PreparedSample],
    stand_in: &[Tensor],
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for i in 0..samples.len() {
        let (batch, s) = pick(samples, stand_in, &[i])?;
        let cond = stage.conditions(&batch, &s)?;
        let x0 = stage.model.encode(&batch.person)?;
        let draw = NoiseDraw::sample(x0.tensor(), stage.model.schedule(), &mut rng)?;
        let loss = diffusion_loss_with(
            &x0,
            &cond,
            stage.model.schedule(),
            stage.model.unet(),
            &draw,
        )?;
        total += loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    }
    Ok(total / samples.len() as f64)
}

fn optimizer(stage: &GenerationStage, config: &RunConfig, phase: GenPhase) -> Result<Adam> {
    let vars = |p: &[&str]| {
        let dotted: Vec<String> = p.iter().map(|p| format!("{p}.")).collect();
        stage
            .store
            .vars_with_prefix(&dotted.iter().map(String::as_str).collect::<Vec<_>>())
    };
    match phase {
        GenPhase::Csvf => {
            let c = &config.csvf;
            Adam::new(
                vars(&[prefixes::MAPPER]),
                AdamConfig::adamw(c.lr, c.beta1, c.beta2, c.weight_decay),
            )
        }
        GenPhase::Dgag => {
            let c = &config.dgag;
            Adam::new(
                vars(&[prefixes::UNET, prefixes::NULL_TEXT]),
                AdamConfig::adam(c.lr, c.beta1, c.beta2),
            )
        }
    }
}

/// Two sequential phases: the mapper for `csvf.steps`, then the denoiser
/// and null text for `dgag.steps` with every condition dropped with
/// probability `dgag.cond_dropout`.
pub fn train_generation(
    samples: &[PreparedSample],
    config: &RunConfig,
    warp: Option<&TrainedWarp>,
    options: &GenTrainOptions,
) -> Result<GenRun> {
    if samples.is_empty() {
        return arg_err("empty manifest: nothing to train the generator on");
    }
    config.validate()?;
    let fingerprint = config.generation_fingerprint();
    let warp_hash = match (config.ablation.use_apwam, warp) {
        (true, Some(w)) => w.hash().to_string(),
        _ => "none".to_string(),
    };
    let stand_in = stand_in_garments(samples, config, warp)?;
    let stage = GenerationStage::new(config)?;
    let text_mode = stage.model.config().text_mode;
    let schedule = stage.model.schedule().clone();
    let phase_of = |s: usize| {
        if s < config.csvf.steps {
            GenPhase::Csvf
        } else {
            GenPhase::Dgag
        }
    };

    let (mut rng, start, saved) = match &options.resume {
        Some(path) => {
            let c = Checkpoint::load(path)?;
            c.expect(CheckpointKind::Generation, &fingerprint)?;
            if c.meta.get(WARP_HASH_KEY) != Some(&warp_hash) {
                return Err(Error::Provenance(format!(
                    "checkpoint was trained on warp {:?}, resuming with {warp_hash}",
                    c.meta.get(WARP_HASH_KEY)
                )));
            }
            c.restore_params(&stage.store)?;
            (TrainRng::restore(&c.rng)?, c.step as usize, Some(c))
        }
        None => (TrainRng::new(config.seed), 0, None),
    };
    let eval_seed = config.seed ^ 0xe7a1;
    let before = fixed_draw_loss(&stage, samples, &stand_in, eval_seed)?;
    let mut log = JsonLog::open(options.log.as_deref(), options.resume.is_some())?;
    let total = config.csvf.steps + config.dgag.steps;
    let end = options.stop_after.map_or(total, |s| s.min(total));
    let clip = (config.clip_norm > 0.0).then_some(config.clip_norm);

    let mut phase = phase_of(start);
    let mut opt = optimizer(&stage, config, phase)?;
    if let Some(c) = &saved {
        if c.meta.get(PHASE_KEY).map(String::as_str) == Some(phase.as_str()) {
            opt.load_state(&c.optimizer_map(), &c.meta)?;
        }
    }
    let n = samples.len();
    let mut step = start;
    while step < end {
        if phase_of(step) != phase {
            phase = phase_of(step);
            opt = optimizer(&stage, config, phase)?;
        }
        let idx = batch_indices(n, config.batch_size, rng.rng());
        let (batch, s) = pick(samples, &stand_in, &idx)?;
        let x0: LatentTensor = stage.model.encode(&batch.person)?;
        let cond = stage.conditions(&batch, &s)?;
        let (cond, drop) = match phase {
            GenPhase::Csvf => (cond, None),
            GenPhase::Dgag => {
                let (c, d) = mask_conditions(
                    &cond,
                    stage.model.null_text(),
                    config.dgag.cond_dropout,
                    rng.rng(),
                )?;
                (c, Some(DropRecord::from(&d)))
            }
        };
        let loss = diffusion_loss(&x0, &cond, &schedule, stage.model.unet(), rng.rng())?;
        let grad_norm = opt.step(&loss.backward()?, clip)?;
        step += 1;
        log.push(GenLogRecord {
            phase,
            step: step as u64,
            lr: opt.lr(),
            seed: config.seed,
            loss: loss.to_dtype(DType::F64)?.to_scalar::<f64>()?,
            grad_norm,
            text_mode,
            drop,
        })?;
    }
    let after = fixed_draw_loss(&stage, samples, &stand_in, eval_seed)?;

    let (optimizer, mut meta) = opt.state();
    meta.insert("config".into(), config.to_toml());
    meta.insert(PHASE_KEY.into(), phase.as_str().into());
    meta.insert(WARP_HASH_KEY.into(), warp_hash);
    let checkpoint = Checkpoint {
        kind: CheckpointKind::Generation,
        fingerprint,
        step: step as u64,
        epoch: 0,
        rng: rng.state(),
        params: stage.store.snapshot(),
        optimizer,
        meta,
    };
    let hash = match &options.output {
        Some(p) => checkpoint.save(p)?,
        None => checkpoint.content_hash()?,
    };
    Ok(GenRun {
        checkpoint,
        hash,
        log: log.into_records(),
        eval_loss: (before, after),
    })
}

/// Fraction of logged denoiser items whose text, warp and pose were dropped.
pub fn drop_rates(log: &[GenLogRecord]) -> Option<[f64; 3]> {
    let mut counts = [0usize; 3];
    let mut items = 0usize;
    for d in log.iter().filter_map(|r| r.drop.as_ref()) {
        items += d.text.len();
        for (c, v) in counts.iter_mut().zip([&d.text, &d.warp, &d.pose]) {
            *c += v.iter().filter(|&&b| b).count();
        }
    }
    (items > 0).then(|| counts.map(|c| c as f64 / items as f64))
}
