use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointKind};
use super::config::{warp_learning_rate, RunConfig};
use super::data::{batch_indices, Batch, PreparedSample};
use super::log::JsonLog;
use super::optim::{Adam, AdamConfig, TrainRng};
use crate::error::{arg_err, Result};
use crate::features::RandomConvExtractor;
use crate::params::ParamStore;
use crate::warp::{warp_training_loss, WarpNetwork};

/// Parameter and activation type for training and inference.
pub const TRAIN_DTYPE: DType = DType::F32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WarpLogRecord {
    Step {
        step: u64,
        epoch: u64,
        lr: f64,
        seed: u64,
        loss: f64,
        l1: f64,
        perceptual: f64,
        smooth_first: f64,
        smooth_second: f64,
        grad_norm: f64,
    },
    /// Means over the epoch's steps.
    Epoch {
        epoch: u64,
        lr: f64,
        seed: u64,
        loss: f64,
        l1: f64,
    },
}

#[derive(Debug, Clone, Default)]
pub struct WarpTrainOptions {
    /// Continue from this checkpoint (written at an epoch boundary).
    pub resume: Option<PathBuf>,
    /// Stop once this many epochs are complete. The schedule still follows
    /// the configured total.
    pub stop_after: Option<usize>,
    pub log: Option<PathBuf>,
    /// Where to write the final checkpoint.
    pub output: Option<PathBuf>,
}

pub struct WarpRun {
    pub checkpoint: Checkpoint,
    /// Content hash of the checkpoint.
    pub hash: String,
    pub log: Vec<WarpLogRecord>,
}

impl WarpRun {
    pub fn step_losses(&self) -> Vec<f64> {
        self.log
            .iter()
            .filter_map(|r| match r {
                WarpLogRecord::Step { loss, .. } => Some(*loss),
                WarpLogRecord::Epoch { .. } => None,
            })
            .collect()
    }

    pub fn step_l1(&self) -> Vec<f64> {
        self.log
            .iter()
            .filter_map(|r| match r {
                WarpLogRecord::Step { l1, .. } => Some(*l1),
                WarpLogRecord::Epoch { .. } => None,
            })
            .collect()
    }
}

fn clip(config: &RunConfig) -> Option<f64> {
    (config.clip_norm > 0.0).then_some(config.clip_norm)
}

/// Trains the warp network on garment-region L1, perceptual and flow
/// smoothness terms. The warped garment is compared with the person's
/// garment pixels only.
pub fn train_warp(
    samples: &[PreparedSample],
    config: &RunConfig,
    options: &WarpTrainOptions,
) -> Result<WarpRun> {
    if samples.is_empty() {
        return arg_err("empty manifest: nothing to train the warp on");
    }
    config.validate()?;
    let tc = &config.warp;
    let fingerprint = config.warp_fingerprint();
    let store = ParamStore::new(config.seed, TRAIN_DTYPE);
    let net = WarpNetwork::new(&store.root(), &config.warp_network())?;
    let mut opt = Adam::new(
        store.vars_with_prefix(&[]),
        AdamConfig::adam(tc.lr, tc.beta1, tc.beta2),
    )?;
    let extractor = RandomConvExtractor::desk(TRAIN_DTYPE)?;

    let (mut rng, mut step, start) = match &options.resume {
        Some(path) => {
            let c = Checkpoint::load(path)?;
            c.expect(CheckpointKind::Warp, &fingerprint)?;
            c.restore_params(&store)?;
            opt.load_state(&c.optimizer_map(), &c.meta)?;
            (TrainRng::restore(&c.rng)?, c.step, c.epoch as usize)
        }
        None => (TrainRng::new(config.seed), 0, 0),
    };
    let mut log = JsonLog::open(options.log.as_deref(), options.resume.is_some())?;
    let n = samples.len();
    let per_epoch = if tc.steps_per_epoch == 0 {
        n.div_ceil(config.batch_size)
    } else {
        tc.steps_per_epoch
    };
    let end = options.stop_after.map_or(tc.epochs, |s| s.min(tc.epochs));
    let mut epoch = start;
    while epoch < end {
        let lr = warp_learning_rate(tc.lr, epoch as f64, tc.decay_start as f64, tc.epochs as f64);
        opt.set_lr(lr);
        let (mut sum_loss, mut sum_l1) = (0.0, 0.0);
        for _ in 0..per_epoch {
            let idx = batch_indices(n, config.batch_size, rng.rng());
            let picked: Vec<&PreparedSample> = idx.iter().map(|&i| &samples[i]).collect();
            let batch = Batch::new(&picked)?;
            let out = net.run(&batch.garment, &batch.person_input)?;
            let warped = out.warped.broadcast_mul(&batch.garment_mask)?;
            let loss = warp_training_loss(
                &warped,
                &batch.garment_region,
                Some(&batch.garment_mask),
                &out.stage_flows,
                &tc.loss,
                &extractor,
            )?;
            let grad_norm = opt.step(&loss.total.backward()?, clip(config))?;
            step += 1;
            let [total, l1, perceptual, smooth_first, smooth_second] = loss.values()?;
            sum_loss += total;
            sum_l1 += l1;
            log.push(WarpLogRecord::Step {
                step,
                epoch: epoch as u64,
                lr,
                seed: config.seed,
                loss: total,
                l1,
                perceptual,
                smooth_first,
                smooth_second,
                grad_norm,
            })?;
        }
        log.push(WarpLogRecord::Epoch {
            epoch: epoch as u64,
            lr,
            seed: config.seed,
            loss: sum_loss / per_epoch as f64,
            l1: sum_l1 / per_epoch as f64,
        })?;
        epoch += 1;
    }

    let (optimizer, mut meta) = opt.state();
    meta.insert("config".into(), config.to_toml());
    let checkpoint = Checkpoint {
        kind: CheckpointKind::Warp,
        fingerprint,
        step,
        epoch: epoch as u64,
        rng: rng.state(),
        params: store.snapshot(),
        optimizer,
        meta,
    };
    let hash = match &options.output {
        Some(p) => checkpoint.save(p)?,
        None => checkpoint.content_hash()?,
    };
    Ok(WarpRun {
        checkpoint,
        hash,
        log: log.into_records(),
    })
}

/// A warp network restored from a checkpoint, used without gradients.
#[derive(Debug, Clone)]
pub struct TrainedWarp {
    net: WarpNetwork,
    hash: String,
}

impl TrainedWarp {
    pub fn from_checkpoint(config: &RunConfig, checkpoint: &Checkpoint) -> Result<Self> {
        checkpoint.expect(CheckpointKind::Warp, &config.warp_fingerprint())?;
        let store = ParamStore::new(config.seed, TRAIN_DTYPE);
        let net = WarpNetwork::new(&store.root(), &config.warp_network())?;
        checkpoint.restore_params(&store)?;
        Ok(Self {
            net,
            hash: checkpoint.content_hash()?,
        })
    }

    pub fn load(config: &RunConfig, path: &Path) -> Result<Self> {
        Self::from_checkpoint(config, &Checkpoint::load(path)?)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn network(&self) -> &WarpNetwork {
        &self.net
    }

    /// Warped garments `(B, 3, H, W)`, cut to the try-on region `mask`.
    pub fn warp(&self, garment: &Tensor, person_input: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let out = self.net.run(garment, person_input)?;
        Ok(out.warped.detach().broadcast_mul(mask)?)
    }
}
