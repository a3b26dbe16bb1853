//! Configuration presets, training loops for the warp and generation
//! stages, checkpointing, inference, ablation suites and image grids.

mod ablation;
mod checkpoint;
mod config;
mod data;
mod grid;
mod infer;
mod log;
mod optim;
mod train_gen;
mod train_warp;

pub use ablation::{run_ablation, AblationReport, AblationRow, DatasetSplit, Suite};
pub use checkpoint::{checkpoint_hash, Checkpoint, CheckpointKind};
pub use config::{
    warp_learning_rate, AblationFlags, CsvfConfig, DgagConfig, InferenceConfig, RunConfig,
    WarpTrainConfig,
};
pub use data::{batch_indices, prepare_all, Batch, PreparedSample};
pub use grid::{compose_grid, emit_grid, HEADER_HEIGHT};
pub use infer::{infer_manifest, record_seed, Provenance, TryOnPipeline};
pub use log::{read_log, JsonLog};
pub use optim::{Adam, AdamConfig, TrainRng};
pub use train_gen::{
    drop_rates, fixed_draw_loss, stand_in_garments, train_generation, DropRecord, GenLogRecord,
    GenPhase, GenRun, GenTrainOptions, GenerationStage,
};
pub use train_warp::{train_warp, TrainedWarp, WarpLogRecord, WarpRun, WarpTrainOptions, TRAIN_DTYPE};
