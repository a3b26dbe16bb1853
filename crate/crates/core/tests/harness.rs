mod common;

use candle_core::{DType, Tensor};
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tryon::generation::TextMode;
use tryon::harness::*;
use tryon::metrics::{EvalMode, PoseScope, GEN_PROVENANCE_FILE};
use tryon::{Error, ImageTensor, ValueRange};

fn warp_for(fx: &Fixture, config: &RunConfig) -> (WarpRun, TrainedWarp) {
    let run = train_warp(&fx.train_samples(), config, &WarpTrainOptions::default()).unwrap();
    let w = TrainedWarp::from_checkpoint(config, &run.checkpoint).unwrap();
    (run, w)
}

#[test]
fn warp_resume_is_bit_identical() {
    let fx = Fixture::new(2, 1);
    let c = tiny_config();
    let s = fx.train_samples();
    let full = train_warp(&s, &c, &WarpTrainOptions::default()).unwrap();
    let mid = fx.path("warp_mid.safetensors");
    let first = train_warp(
        &s,
        &c,
        &WarpTrainOptions {
            stop_after: Some(1),
            output: Some(mid.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(first.checkpoint.epoch, 1);
    let rest = train_warp(
        &s,
        &c,
        &WarpTrainOptions {
            resume: Some(mid),
            ..Default::default()
        },
    )
    .unwrap();
    let mut joined = first.step_losses();
    joined.extend(rest.step_losses());
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&joined), bits(&full.step_losses()));
    assert_eq!(rest.hash, full.hash);
}

#[test]
fn generation_resume_is_bit_identical_in_either_phase() {
    let fx = Fixture::new(2, 1);
    let c = tiny_config();
    let s = fx.train_samples();
    let (_, w) = warp_for(&fx, &c);
    let full = train_generation(&s, &c, Some(&w), &GenTrainOptions::default()).unwrap();
    // 2 is the phase boundary, 3 is inside the denoiser phase
    for stop in [1, 2, 3] {
        let mid = fx.path(&format!("gen_{stop}.safetensors"));
        let first = train_generation(
            &s,
            &c,
            Some(&w),
            &GenTrainOptions {
                stop_after: Some(stop),
                output: Some(mid.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        let rest = train_generation(
            &s,
            &c,
            Some(&w),
            &GenTrainOptions {
                resume: Some(mid),
                ..Default::default()
            },
        )
        .unwrap();
        let losses: Vec<u64> = first.log.iter().chain(&rest.log).map(|r| r.loss.to_bits()).collect();
        let want: Vec<u64> = full.log.iter().map(|r| r.loss.to_bits()).collect();
        assert_eq!(losses, want, "stop after {stop}");
        assert_eq!(rest.hash, full.hash, "stop after {stop}");
    }
}

#[test]
fn resume_rejects_other_config() {
    let fx = Fixture::new(2, 1);
    let c = tiny_config();
    let s = fx.train_samples();
    let path = fx.path("w.safetensors");
    train_warp(
        &s,
        &c,
        &WarpTrainOptions {
            stop_after: Some(1),
            output: Some(path.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    let mut other = c.clone();
    other.warp.lr *= 2.0;
    let err = train_warp(
        &s,
        &other,
        &WarpTrainOptions {
            resume: Some(path.clone()),
            ..Default::default()
        },
    );
    assert!(err.is_err());
    assert!(TrainedWarp::load(&other, &path).is_err());
    // generation-only fields do not touch the warp fingerprint
    let mut gen_only = c.clone();
    gen_only.dgag.steps += 1;
    assert!(TrainedWarp::load(&gen_only, &path).is_ok());
}

#[test]
fn missing_warp_checkpoint_is_an_error() {
    let fx = Fixture::new(1, 1);
    let c = tiny_config();
    let s = fx.train_samples();
    assert!(matches!(
        train_generation(&s, &c, None, &GenTrainOptions::default()),
        Err(Error::Checkpoint(_))
    ));
    let mut off = c.clone();
    off.ablation.use_apwam = false;
    let run = train_generation(&s, &off, None, &GenTrainOptions::default()).unwrap();
    assert!(TryOnPipeline::new(&off, &run.checkpoint, None).is_ok());
    // a generator trained without the warp cannot be used with it enabled
    assert!(TryOnPipeline::new(&c, &run.checkpoint, None).is_err());
    assert!(train_generation(&[], &off, None, &GenTrainOptions::default()).is_err());
    assert!(train_warp(&[], &c, &WarpTrainOptions::default()).is_err());
}

#[test]
fn inference_is_deterministic_and_records_provenance() {
    let fx = Fixture::new(2, 1);
    let c = tiny_config();
    let s = fx.train_samples();
    let (wrun, w) = warp_for(&fx, &c);
    let g = train_generation(&s, &c, Some(&w), &GenTrainOptions::default()).unwrap();
    let pipeline = TryOnPipeline::new(&c, &g.checkpoint, Some(w.clone())).unwrap();
    let mut dirs = Vec::new();
    for k in 0..2 {
        let out = fx.path(&format!("gen{k}"));
        let written = infer_manifest(&pipeline, fx.root(), &fx.test, EvalMode::Paired, PoseScope::Both, &out, 9).unwrap();
        assert_eq!(written.len(), fx.test.records.len());
        dirs.push((out, written));
    }
    for (a, b) in dirs[0].1.iter().zip(&dirs[1].1) {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        let img = ImageTensor::load_png(a, ValueRange::Unit).unwrap();
        assert_eq!(img.hw(), (c.height, c.width));
    }
    let prov: Provenance =
        serde_json::from_str(&std::fs::read_to_string(dirs[0].0.join(GEN_PROVENANCE_FILE)).unwrap()).unwrap();
    assert_eq!(prov.generation_checkpoint, g.hash);
    assert_eq!(prov.warp_checkpoint.as_deref(), Some(wrun.hash.as_str()));
    assert_eq!(prov.seed, 9);

    // different seed, different pixels
    let other = fx.path("gen_other");
    let w2 = infer_manifest(&pipeline, fx.root(), &fx.test, EvalMode::Paired, PoseScope::Both, &other, 10).unwrap();
    assert_ne!(std::fs::read(&w2[0]).unwrap(), std::fs::read(&dirs[0].1[0]).unwrap());

    // config drift is caught
    let mut drift = c.clone();
    drift.seed += 1;
    assert!(TryOnPipeline::new(&drift, &g.checkpoint, Some(w.clone())).is_err());
    // inference settings alone do not invalidate the generator
    let mut faster = c.clone();
    faster.inference.steps = 2;
    assert!(TryOnPipeline::new(&faster, &g.checkpoint, Some(w)).is_ok());
}

#[test]
fn text_mode_none_feeds_the_null_context() {
    let fx = Fixture::new(1, 1);
    let s = fx.train_samples();
    for flags in [
        AblationFlags {
            text_mode: TextMode::None,
            ..Default::default()
        },
        AblationFlags {
            use_srcm: false,
            ..Default::default()
        },
    ] {
        let mut c = tiny_config();
        c.ablation = flags;
        c.ablation.use_apwam = false;
        let stage = GenerationStage::new(&c).unwrap();
        let refs: Vec<&PreparedSample> = s.iter().collect();
        let batch = Batch::new(&refs).unwrap();
        let cond = stage.conditions(&batch, &batch.garment_region).unwrap();
        let (null, _) = stage.model.null_context(batch.len()).unwrap();
        let diff = (&cond.ctx - &null).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(diff, 0.0);
        let run = train_generation(&s, &c, None, &GenTrainOptions::default()).unwrap();
        assert!(run.log.iter().all(|r| r.text_mode == TextMode::None));
    }
}

#[test]
fn training_logs_are_line_delimited_json() {
    let fx = Fixture::new(2, 1);
    let mut c = tiny_config();
    c.ablation.use_apwam = false;
    let s = fx.train_samples();
    let log = fx.path("gen.jsonl");
    let run = train_generation(
        &s,
        &c,
        None,
        &GenTrainOptions {
            log: Some(log.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    let back: Vec<GenLogRecord> = read_log(&log).unwrap();
    assert_eq!(back, run.log);
    assert_eq!(back.len(), c.csvf.steps + c.dgag.steps);
    assert!(back.iter().all(|r| r.seed == c.seed));
    assert_eq!(back.iter().filter(|r| r.drop.is_some()).count(), c.dgag.steps);
    assert!(drop_rates(&back).is_some());

    let wlog = fx.path("warp.jsonl");
    train_warp(
        &s,
        &c,
        &WarpTrainOptions {
            log: Some(wlog.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    let text = std::fs::read_to_string(&wlog).unwrap();
    assert_eq!(text.lines().count(), c.warp.epochs * (c.warp.steps_per_epoch + 1));
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["lr", "seed", "loss"] {
            assert!(v.get(key).is_some(), "{line}");
        }
    }
}

#[test]
fn dropout_rate_is_binomially_close() {
    let rates = dropout_audit(100, 100, 0.2, 61);
    for r in rates {
        assert!((r - 0.2).abs() <= 0.012, "{rates:?}");
    }
}

#[test]
fn grid_cells_match_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let (h, w) = (10usize, 7usize);
    let cells: Vec<Vec<ImageTensor>> = (0..2)
        .map(|_| {
            (0..3)
                .map(|_| {
                    let v: Vec<f32> = (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
                    ImageTensor::from_vec(v, 3, h, w, ValueRange::Unit).unwrap()
                })
                .collect()
        })
        .collect();
    let img = compose_grid(&cells, &["garment", "person", "result"]).unwrap();
    assert_eq!(img.dimensions(), (3 * w as u32, HEADER_HEIGHT + 2 * h as u32));
    for (r, row) in cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let want = cell.to_rgb8().unwrap();
            for y in 0..h as u32 {
                for x in 0..w as u32 {
                    let got = img.get_pixel(c as u32 * w as u32 + x, HEADER_HEIGHT + r as u32 * h as u32 + y);
                    assert_eq!(got, want.get_pixel(x, y), "cell ({r},{c}) at ({x},{y})");
                }
            }
        }
    }
    let path = tempfile::tempdir().unwrap().path().join("sub/grid.png");
    assert!(emit_grid(&cells, &[], &path).is_ok());
}

#[test]
fn suites_have_their_row_counts() {
    let counts: Vec<usize> = Suite::ALL.iter().map(|s| s.settings().len()).collect();
    assert_eq!(counts, [4, 3, 4]);
    let t3: Vec<(bool, bool)> = Suite::Table3
        .settings()
        .iter()
        .map(|(_, f)| (f.mre_deformable, f.dfen_deformable))
        .collect();
    assert_eq!(t3, [(false, false), (true, false), (false, true), (true, true)]);
    assert!("table6".parse::<Suite>().is_err());
    assert_eq!("table4".parse::<Suite>().unwrap(), Suite::Table4);
}

#[test]
fn text_ablation_shares_the_seed() {
    let fx = Fixture::new(2, 1);
    let report = tiny_ablation(&fx, Suite::Table4);
    assert_eq!(report.rows.len(), 3);
    let seeds: Vec<u64> = report.rows.iter().map(|r| r.seed).collect();
    assert!(seeds.iter().all(|&s| s == tiny_config().seed));
    // one warp network serves every text setting
    let warps: Vec<_> = report.rows.iter().map(|r| r.warp_checkpoint.clone()).collect();
    assert!(warps.iter().all(|w| w.is_some() && *w == warps[0]));
    let modes: Vec<TextMode> = report.rows.iter().map(|r| r.flags.text_mode).collect();
    assert_eq!(modes, [TextMode::None, TextMode::Raw, TextMode::Structured]);
    let table = report.to_table();
    assert_eq!(table.lines().filter(|l| l.starts_with("w/")).count(), 3, "{table}");
}

#[test]
fn config_round_trips_through_toml() {
    for c in [RunConfig::desk(), RunConfig::full(), tiny_config()] {
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back.fingerprint(), c.fingerprint());
        assert_eq!(back, c.normalized());
    }
    assert!(RunConfig::from_toml("bogus = 1").is_err());
}

fn mutate(c: &mut RunConfig, field: usize, k: f64) {
    match field {
        0 => c.seed += 1,
        1 => c.batch_size += 1,
        2 => c.clip_norm += k,
        3 => c.warp.lr *= 1.0 + k,
        4 => c.warp.beta1 *= 0.5,
        5 => c.warp.epochs += 1,
        6 => c.warp.loss.perceptual += k,
        7 => c.warp.loss.smooth_second += k,
        8 => c.csvf.steps += 1,
        9 => c.csvf.weight_decay += k,
        10 => c.dgag.cond_dropout = (c.dgag.cond_dropout + k).min(1.0),
        11 => c.dgag.lr *= 1.0 + k,
        12 => c.inference.guidance_scale += k,
        13 => c.inference.steps += 1,
        14 => c.ablation.mre_deformable = !c.ablation.mre_deformable,
        15 => c.ablation.use_apwam = !c.ablation.use_apwam,
        16 => c.ablation.text_mode = TextMode::Raw,
        _ => c.generation.timesteps += 1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fingerprint_tracks_every_field(field in 0usize..18, k in 0.01f64..0.5) {
        let base = RunConfig::desk();
        let mut c = base.clone();
        mutate(&mut c, field, k);
        prop_assert_ne!(c.fingerprint(), base.fingerprint());
        let mut same = base.clone();
        mutate(&mut same, field, k);
        prop_assert_eq!(same.fingerprint(), c.fingerprint());
    }

    #[test]
    fn flag_shadowed_fields_do_not_change_fingerprint(flip_mre in any::<bool>(), mode in 0usize..3) {
        // nested copies of the flags are overwritten by normalization
        let base = RunConfig::desk();
        let mut c = base.clone();
        if flip_mre {
            c.warp.network.mre_deformable = !c.warp.network.mre_deformable;
        }
        c.generation.text_mode = TextMode::ALL[mode];
        prop_assert_eq!(c.fingerprint(), base.fingerprint());
        // text mode is moot once structured captions are off
        let mut a = base.clone();
        a.ablation.use_srcm = false;
        let mut b = a.clone();
        b.ablation.text_mode = TextMode::ALL[mode];
        prop_assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn lr_schedule_is_piecewise_linear(
        base in 1e-6f64..1e-2,
        decay in 1usize..60,
        extra in 1usize..60,
        e in 0.0f64..130.0,
    ) {
        let total = (decay + extra) as f64;
        let d = decay as f64;
        let lr = warp_learning_rate(base, e, d, total);
        let want = if e <= d { base } else if e >= total { 0.0 } else { base * (total - e) / (total - d) };
        prop_assert!((lr - want).abs() <= 1e-15 * base);
        prop_assert!(lr >= 0.0 && lr <= base);
        // linear between breakpoints: midpoint of two decay-phase epochs
        if e > d && e + 1.0 < total {
            let mid = warp_learning_rate(base, e + 0.5, d, total);
            let avg = 0.5 * (lr + warp_learning_rate(base, e + 1.0, d, total));
            prop_assert!((mid - avg).abs() <= 1e-12 * base);
        }
    }
}

#[test]
fn published_schedule_breakpoints() {
    let c = RunConfig::full();
    let lr = |e: f64| warp_learning_rate(c.warp.lr, e, c.warp.decay_start as f64, c.warp.epochs as f64);
    assert_eq!(lr(50.0), 5e-5);
    assert!((lr(75.0) - 2.5e-5).abs() < 1e-18);
    assert_eq!(lr(100.0), 0.0);
    assert_eq!((c.height, c.width), (512, 384));
    let _ = Tensor::zeros(1, DType::F32, &candle_core::Device::Cpu).unwrap();
}
