use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tryon::features::RandomConvExtractor;
use tryon::harness::{
    emit_grid, infer_manifest, prepare_all, PreparedSample, run_ablation, train_generation, train_warp, DatasetSplit, GenTrainOptions,
    RunConfig, Suite, TrainedWarp, TRAIN_DTYPE, TryOnPipeline, WarpTrainOptions,
};
use tryon::metrics::{evaluate_pairs, evaluate_pose_robustness, export_references, EvalMode, PoseScope};
use tryon::semantics::{build_manifest, load_records, write_fixture_split, BuildOptions, DatasetManifest, FixtureSpec, Split};
use tryon::{ImageTensor, ValueRange};

#[derive(Parser)]
#[command(name = "tryon", version, about = "Garment warping and diffusion try-on: data, training, inference, evaluation")]
struct Cli {
    /// TOML run config. Takes precedence over `--preset`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in config when no `--config` is given: `desk` or `full`.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the canonical form of the config and its fingerprints.
    Config,
    /// Validate a dataset split and write its manifest.
    BuildDataset {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
        /// Write a synthetic split with this many subjects first.
        #[arg(long)]
        fixture: Option<usize>,
        /// Manifest path (default `<root>/<split>_manifest.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the warp network.
    TrainWarp {
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        run: RunFiles,
        /// Stop after this many epochs.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Train the pseudo-word mapper, then the denoiser.
    TrainGen {
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        run: RunFiles,
        /// Warp checkpoint; required unless the warp module is disabled.
        #[arg(long)]
        warp: Option<PathBuf>,
        /// Stop after this many global steps.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Generate try-on images for every record of a manifest.
    Infer {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        warp: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sel: Selection,
        /// Reverse diffusion steps (0 = full schedule).
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        guidance_scale: Option<f64>,
    },
    /// Score generated images against references.
    Evaluate {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Export references from this dataset root into `--ref` first,
        /// at the configured resolution.
        #[arg(long)]
        root: Option<PathBuf>,
        #[command(flatten)]
        sel: Selection,
        /// Report pose 1, pose 2 and their differences.
        #[arg(long)]
        robustness: bool,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train and evaluate every setting of an ablation suite.
    Ablate {
        suite: Suite,
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        train_manifest: PathBuf,
        #[arg(long)]
        test_manifest: PathBuf,
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Tile images into a grid with column headers.
    Grid {
        /// One comma-separated list of PNG paths per row.
        #[arg(long = "row", required = true)]
        rows: Vec<String>,
        /// Comma-separated column headers.
        #[arg(long, default_value = "")]
        headers: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Data {
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct RunFiles {
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Line-delimited JSON training log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct Selection {
    #[arg(long, default_value = "paired")]
    mode: EvalMode,
    /// 1, 2 or both.
    #[arg(long, default_value = "both")]
    pose: PoseScope,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => match cli.preset.as_str() {
            "desk" => RunConfig::desk(),
            "full" => RunConfig::full(),
            p => bail!("unknown preset `{p}` (expected desk or full)"),
        },
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn samples(config: &RunConfig, data: &Data) -> Result<Vec<PreparedSample>> {
    let manifest = DatasetManifest::load(&data.manifest)?;
    let options = BuildOptions {
        height: config.height,
        width: config.width,
        resize: true,
    };
    let records = load_records(&data.root, &manifest, &options)?;
    Ok(prepare_all(&records, config.height, config.width, TRAIN_DTYPE)?)
}

fn build_dataset(config: &RunConfig, root: &Path, split: Split, fixture: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    if let Some(subjects) = fixture {
        let spec = FixtureSpec {
            height: config.height,
            width: config.width,
            subjects,
            seed: config.seed,
        };
        write_fixture_split(root, split, &spec)?;
    }
    let options = BuildOptions {
        height: config.height,
        width: config.width,
        resize: true,
    };
    let build = build_manifest(root, split, &options)?;
    for w in &build.warnings {
        eprintln!("warning: {w}");
    }
    for e in &build.errors {
        eprintln!("error: {}: {}", e.path, e.message);
    }
    let out = out.unwrap_or_else(|| root.join(format!("{split}_manifest.json")));
    build.manifest.save(&out)?;
    println!(
        "{} records ({} pose 1, {} pose 2), {} rejected -> {}",
        build.manifest.records.len(),
        build.manifest.count(1),
        build.manifest.count(2),
        build.errors.len(),
        out.display()
    );
    Ok(())
}

fn grid(rows: &[String], headers: &str, out: &Path) -> Result<()> {
    let cells = rows
        .iter()
        .map(|r| {
            r.split(',')
                .map(|p| ImageTensor::load_png(Path::new(p.trim()), ValueRange::Unit).with_context(|| format!("reading {p}")))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let headers: Vec<&str> = if headers.is_empty() { Vec::new() } else { headers.split(',').collect() };
    let (w, h) = emit_grid(&cells, &headers, out)?;
    println!("{w}x{h} -> {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Config => {
            print!("{}", config.to_toml());
            println!("# fingerprint = \"{}\"", config.fingerprint());
            println!("# warp_fingerprint = \"{}\"", config.warp_fingerprint());
            println!("# generation_fingerprint = \"{}\"", config.generation_fingerprint());
        }
        Command::BuildDataset { root, split, fixture, out } => build_dataset(&config, &root, split, fixture, out)?,
        Command::TrainWarp { data, run, stop_after } => {
            let s = samples(&config, &data)?;
            let r = train_warp(&s, &config, &WarpTrainOptions {
                resume: run.resume,
                stop_after,
                log: run.log,
                output: Some(run.out.clone()),
            })?;
            let last = r.step_losses().last().copied().unwrap_or(f64::NAN);
            println!("warp checkpoint {} ({}), step {}, loss {last:.5}", run.out.display(), r.hash, r.checkpoint.step);
        }
        Command::TrainGen {
            data,
            run,
            warp,
            stop_after,
        } => {
            let s = samples(&config, &data)?;
            let w = warp.as_deref().map(|p| TrainedWarp::load(&config, p)).transpose()?;
            let r = train_generation(&s, &config, w.as_ref(), &GenTrainOptions {
                resume: run.resume,
                stop_after,
                log: run.log,
                output: Some(run.out.clone()),
            })?;
            println!(
                "generation checkpoint {} ({}), step {}, fixed-draw loss {:.5} -> {:.5}",
                run.out.display(),
                r.hash,
                r.checkpoint.step,
                r.eval_loss.0,
                r.eval_loss.1
            );
        }
        Command::Infer {
            data,
            gen,
            warp,
            out,
            sel,
            steps,
            guidance_scale,
        } => {
            if let Some(s) = steps {
                config.inference.steps = s;
            }
            if let Some(g) = guidance_scale {
                config.inference.guidance_scale = g;
            }
            config.validate()?;
            let manifest = DatasetManifest::load(&data.manifest)?;
            let pipeline = TryOnPipeline::load(&config, &gen, warp.as_deref())?;
            let written = infer_manifest(&pipeline, &data.root, &manifest, sel.mode, sel.pose, &out, config.seed)?;
            println!("{} images -> {}", written.len(), out.display());
        }
        Command::Evaluate {
            gen,
            reference,
            manifest,
            root,
            sel,
            robustness,
            json,
        } => {
            let manifest = DatasetManifest::load(&manifest)?;
            if let Some(root) = root {
                export_references(&root, &manifest, &reference, Some((config.height, config.width)))?;
            }
            let extractor = RandomConvExtractor::desk(TRAIN_DTYPE)?;
            let (table, body) = if robustness {
                let r = evaluate_pose_robustness(&gen, &reference, &manifest, sel.mode, &extractor)?;
                (r.to_table(), r.to_json())
            } else {
                let r = evaluate_pairs(&gen, &reference, &manifest, sel.mode, sel.pose, &extractor)?;
                (r.to_table(), r.to_json())
            };
            print!("{table}");
            if let Some(p) = json {
                std::fs::write(p, body)?;
            }
        }
        Command::Ablate {
            suite,
            root,
            train_manifest,
            test_manifest,
            work,
            json,
        } => {
            let train = DatasetManifest::load(&train_manifest)?;
            let test = DatasetManifest::load(&test_manifest)?;
            let report = run_ablation(
                suite,
                &config,
                &DatasetSplit {
                    root: &root,
                    manifest: &train,
                },
                &DatasetSplit {
                    root: &root,
                    manifest: &test,
                },
                &work,
            )?;
            print!("{}", report.to_table());
            if let Some(p) = json {
                std::fs::write(p, report.to_json())?;
            }
        }
        Command::Grid { rows, headers, out } => {
            if rows.is_empty() {
                bail!("at least one --row is required");
            }
            grid(&rows, &headers, &out)?
        }
    }
    Ok(())
}
