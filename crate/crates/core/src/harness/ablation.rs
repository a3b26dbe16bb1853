use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AblationFlags, RunConfig};
use super::data::{prepare_all, PreparedSample};
use super::infer::{infer_manifest, TryOnPipeline};
use super::train_gen::{train_generation, GenTrainOptions};
use super::train_warp::{train_warp, TrainedWarp, WarpTrainOptions, TRAIN_DTYPE};
use crate::error::{arg_err, Error, Result};
use crate::features::RandomConvExtractor;
use crate::generation::TextMode;
use crate::metrics::{
    evaluate_pairs, export_references, metric_table, EvalMode, MetricReport, PoseScope,
};
use crate::semantics::{load_records, BuildOptions, DatasetManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Deformable convolution in the pyramids and flow heads.
    Table3,
    /// Text pathway.
    Table4,
    /// Warp module and structured captions.
    Table5,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Table3, Suite::Table4, Suite::Table5];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Table3 => "table3",
            Suite::Table4 => "table4",
            Suite::Table5 => "table5",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Suite::Table3 => "Deformable convolution in the warp module",
            Suite::Table4 => "Text conditioning",
            Suite::Table5 => "Warp module and caption semantics",
        }
    }

    /// Labelled flag settings, in table row order.
    pub fn settings(self) -> Vec<(&'static str, AblationFlags)> {
        let base = AblationFlags::default();
        match self {
            Suite::Table3 => [
                ("BS w/o", false, false),
                ("MRE w/", true, false),
                ("DFEN w/", false, true),
                ("M+F w/", true, true),
            ]
            .into_iter()
            .map(|(l, mre, dfen)| {
                (
                    l,
                    AblationFlags {
                        mre_deformable: mre,
                        dfen_deformable: dfen,
                        ..base
                    },
                )
            })
            .collect(),
            Suite::Table4 => [
                ("w/o Text", TextMode::None),
                ("w/ Raw_Text", TextMode::Raw),
                ("w/ Proposed_Text", TextMode::Structured),
            ]
            .into_iter()
            .map(|(l, text_mode)| (l, AblationFlags { text_mode, ..base }))
            .collect(),
            Suite::Table5 => vec![
                (
                    "only w/ APWAM",
                    AblationFlags {
                        use_srcm: false,
                        ..base
                    },
                ),
                (
                    "only w/ SRCM",
                    AblationFlags {
                        use_apwam: false,
                        ..base
                    },
                ),
                (
                    "APWAM + SRCM (Raw_Text)",
                    AblationFlags {
                        text_mode: TextMode::Raw,
                        ..base
                    },
                ),
                ("APWAM + SRCM (Proposed_Text)", base),
            ],
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table3" => Ok(Suite::Table3),
            "table4" => Ok(Suite::Table4),
            "table5" => Ok(Suite::Table5),
            _ => arg_err(format!(
                "unknown suite `{s}` (expected table3, table4 or table5)"
            )),
        }
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub flags: AblationFlags,
    pub seed: u64,
    pub fingerprint: String,
    pub warp_checkpoint: Option<String>,
    pub generation_checkpoint: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: Suite,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Title line followed by one metric row per setting.
    pub fn to_table(&self) -> String {
        let rows: Vec<(String, &MetricReport)> = self
            .rows
            .iter()
            .map(|r| (r.label.clone(), &r.report))
            .collect();
        format!(
            "{}: {}\n{}",
            self.suite,
            self.suite.title(),
            metric_table(&rows)
        )
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data");
        s.push('\n');
        s
    }
}

/// A dataset root with its manifest.
pub struct DatasetSplit<'a> {
    pub root: &'a Path,
    pub manifest: &'a DatasetManifest,
}

fn prepared(split: &DatasetSplit<'_>, config: &RunConfig) -> Result<Vec<PreparedSample>> {
    let options = BuildOptions {
        height: config.height,
        width: config.width,
        resize: true,
    };
    let records = load_records(split.root, split.manifest, &options)?;
    prepare_all(&records, config.height, config.width, TRAIN_DTYPE)
}

/// Trains and evaluates every setting of `suite` from `base`, sharing the
/// seed and everything else but the flags. Warp networks are trained once
/// per distinct warp configuration. Generated images go under `work_dir`.
pub fn run_ablation(
    suite: Suite,
    base: &RunConfig,
    train: &DatasetSplit<'_>,
    test: &DatasetSplit<'_>,
    work_dir: &Path,
) -> Result<AblationReport> {
    if train.manifest.is_empty() || test.manifest.is_empty() {
        return arg_err("ablation needs non-empty train and test manifests");
    }
    let train_samples = prepared(train, base)?;
    let refs = work_dir.join("reference");
    export_references(
        test.root,
        test.manifest,
        &refs,
        Some((base.height, base.width)),
    )?;
    let extractor = RandomConvExtractor::desk(TRAIN_DTYPE)?;
    let mut warps: HashMap<String, TrainedWarp> = HashMap::new();
    let mut rows = Vec::new();
    for (label, flags) in suite.settings() {
        let config = RunConfig {
            ablation: flags,
            ..base.clone()
        };
        let warp = if flags.use_apwam {
            let key = config.warp_fingerprint();
            if !warps.contains_key(&key) {
                let run = train_warp(&train_samples, &config, &WarpTrainOptions::default())?;
                warps.insert(
                    key.clone(),
                    TrainedWarp::from_checkpoint(&config, &run.checkpoint)?,
                );
            }
            warps.get(&key)
        } else {
            None
        };
        let run = train_generation(&train_samples, &config, warp, &GenTrainOptions::default())?;
        let pipeline = TryOnPipeline::new(&config, &run.checkpoint, warp.cloned())?;
        let gen_dir: PathBuf = work_dir.join(slug(label));
        infer_manifest(
            &pipeline,
            test.root,
            test.manifest,
            EvalMode::Paired,
            PoseScope::Both,
            &gen_dir,
            config.seed,
        )?;
        let report = evaluate_pairs(
            &gen_dir,
            &refs,
            test.manifest,
            EvalMode::Paired,
            PoseScope::Both,
            &extractor,
        )?;
        let prov = pipeline.provenance(config.seed);
        rows.push(AblationRow {
            label: label.to_string(),
            flags,
            seed: config.seed,
            fingerprint: config.fingerprint(),
            warp_checkpoint: prov.warp_checkpoint,
            generation_checkpoint: prov.generation_checkpoint,
            report,
        });
    }
    Ok(AblationReport { suite, rows })
}

fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    s.split('_')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}
