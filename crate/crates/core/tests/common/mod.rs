#![allow(dead_code)]

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use tryon::generation::{
    diffusion_loss_with, DenoiseConditions, DiffusionSchedule, GeometricCondition, LatentTensor, NoiseDraw,
    PseudoWordMapper, QueryMapper, TinyUNet, UNetConfig,
};
use tryon::harness::{prepare_all, PreparedSample, RunConfig, TRAIN_DTYPE};
use tryon::nn::warp_bilinear;
use tryon::params::ParamStore;
use tryon::semantics::{build_manifest, load_records, write_fixture_split, BuildOptions, DatasetManifest, FixtureSpec, Split};
use tryon::warp::{deform_conv, DeformableKernel};

pub const FIXTURE_SEED: u64 = 3;

/// A fixture tree with train and test splits at the desk resolution.
pub struct Fixture {
    pub dir: TempDir,
    pub train: DatasetManifest,
    pub test: DatasetManifest,
}

impl Fixture {
    pub fn new(train_subjects: usize, test_subjects: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig::desk();
        let opts = BuildOptions {
            height: c.height,
            width: c.width,
            resize: false,
        };
        let mut manifests = Vec::new();
        for (split, n) in [(Split::Train, train_subjects), (Split::Test, test_subjects)] {
            let spec = FixtureSpec {
                height: c.height,
                width: c.width,
                subjects: n,
                seed: FIXTURE_SEED,
            };
            write_fixture_split(dir.path(), split, &spec).unwrap();
            let b = build_manifest(dir.path(), split, &opts).unwrap();
            assert!(b.errors.is_empty(), "{:?}", b.errors);
            manifests.push(b.manifest);
        }
        let test = manifests.pop().unwrap();
        let train = manifests.pop().unwrap();
        Self { dir, train, test }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn train_samples(&self) -> Vec<PreparedSample> {
        samples_of(self.root(), &self.train)
    }

    pub fn test_samples(&self) -> Vec<PreparedSample> {
        samples_of(self.root(), &self.test)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root().join(name)
    }
}

pub fn samples_of(root: &Path, manifest: &DatasetManifest) -> Vec<PreparedSample> {
    let c = RunConfig::desk();
    let opts = BuildOptions {
        height: c.height,
        width: c.width,
        resize: true,
    };
    let recs = load_records(root, manifest, &opts).unwrap();
    prepare_all(&recs, c.height, c.width, TRAIN_DTYPE).unwrap()
}

/// A desk config shrunk for tests that only need the plumbing to run.
pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::desk();
    c.batch_size = 2;
    c.warp.epochs = 2;
    c.warp.decay_start = 1;
    c.warp.steps_per_epoch = 2;
    c.csvf.steps = 2;
    c.dgag.steps = 3;
    c.inference.steps = 4;
    c
}

// ---------------------------------------------------------------------------
// finite differences

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

/// Largest relative error between backprop and central differences of the
/// scalar `f` over `picks` coordinates of each var.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`. Panics if every
/// probed derivative is ~0, which would make the comparison vacuous.
pub fn fd_max_rel_err(vars: &[&Var], f: &dyn Fn() -> Tensor, picks: usize, seed: u64) -> f64 {
    let h = 1e-6;
    let grads = f().backward().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut largest = 0.0f64;
    for var in vars {
        let g = grads
            .get(var.as_tensor())
            .expect("var takes part in the loss")
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let base = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let shape = var.as_tensor().shape().clone();
        for _ in 0..picks {
            let i = rng.random_range(0..base.len());
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, shape.clone(), &Device::Cpu).unwrap()).unwrap();
                f().to_scalar::<f64>().unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = g[i];
            largest = largest.max(numeric.abs());
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        var.set(&Tensor::from_vec(base, shape, &Device::Cpu).unwrap()).unwrap();
    }
    assert!(largest > 1e-4, "every probed derivative vanished");
    worst
}

fn weighted_sum(y: &Tensor, probe: &Tensor) -> Tensor {
    y.mul(probe).unwrap().sum_all().unwrap()
}

/// Deformable convolution: offsets, weights, input.
pub fn grad_deform_conv(seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Var::from_tensor(&uniform(&[1, 3, 6, 5], -1.0, 1.0, &mut rng)).unwrap();
    let w = Var::from_tensor(&uniform(&[4, 3, 3, 3], -0.5, 0.5, &mut rng)).unwrap();
    let off = Var::from_tensor(&uniform(&[1, 18, 6, 5], -1.5, 1.5, &mut rng)).unwrap();
    let probe = uniform(&[1, 4, 6, 5], -1.0, 1.0, &mut rng);
    let f = || {
        let k = DeformableKernel {
            weights: w.as_tensor().clone(),
            bias: None,
            offsets: off.as_tensor().clone(),
        };
        weighted_sum(&deform_conv(x.as_tensor(), &k).unwrap(), &probe)
    };
    [
        fd_max_rel_err(&[&off], &f, 24, seed),
        fd_max_rel_err(&[&w], &f, 24, seed + 1),
        fd_max_rel_err(&[&x], &f, 24, seed + 2),
    ]
}

/// Bilinear warp with respect to the flow.
pub fn grad_warp_flow(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = uniform(&[2, 3, 7, 6], -1.0, 1.0, &mut rng);
    let flow = Var::from_tensor(&uniform(&[2, 2, 7, 6], -2.5, 2.5, &mut rng)).unwrap();
    let probe = uniform(&[2, 3, 7, 6], -1.0, 1.0, &mut rng);
    let f = || weighted_sum(&warp_bilinear(&img, flow.as_tensor()).unwrap(), &probe);
    fd_max_rel_err(&[&flow], &f, 32, seed)
}

/// Pseudo-word mapper: visual tokens and the output projection.
pub fn grad_mapper(seed: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = ParamStore::new(seed, DType::F64);
    let mapper = QueryMapper::new(&store.root().pp("mapper"), 12, 8, 2).unwrap();
    let tokens = Var::from_tensor(&uniform(&[1, 5, 12], -1.0, 1.0, &mut rng)).unwrap();
    let out = store.vars_with_prefix(&["mapper.out."]);
    let out_w = out.iter().find(|(n, _)| n.ends_with("weight")).map(|(_, v)| v.clone()).unwrap();
    let probe = uniform(&[1, 16, 8], -1.0, 1.0, &mut rng);
    let f = || weighted_sum(&mapper.map(tokens.as_tensor()).unwrap(), &probe);
    [
        fd_max_rel_err(&[&tokens], &f, 24, seed),
        fd_max_rel_err(&[&out_w], &f, 24, seed + 1),
    ]
}

/// Diffusion loss through a small denoiser: text context and one denoiser
/// weight.
pub fn grad_diffusion_loss(seed: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = ParamStore::new(seed, DType::F64);
    let cfg = UNetConfig {
        channels: [8, 16],
        heads: 2,
        groups: 4,
        time_dim: 16,
    };
    let unet = TinyUNet::new(&store.root().pp("unet"), &cfg, 8).unwrap();
    let (h, w) = (4, 4);
    let lat = |rng: &mut ChaCha8Rng| LatentTensor::new(uniform(&[1, 4, h, w], -1.0, 1.0, rng)).unwrap();
    let geo = GeometricCondition::from_latent_maps(
        lat(&mut rng),
        lat(&mut rng),
        uniform(&[1, 1, h, w], 0.0, 1.0, &mut rng).ge(0.5).unwrap().to_dtype(DType::F64).unwrap(),
        uniform(&[1, 3, h, w], -1.0, 1.0, &mut rng),
    )
    .unwrap();
    let ctx = Var::from_tensor(&uniform(&[1, 5, 8], -1.0, 1.0, &mut rng)).unwrap();
    let x0 = lat(&mut rng);
    let schedule = DiffusionSchedule::linear(20, 1e-4, 0.02).unwrap();
    let draw = NoiseDraw::sample(x0.tensor(), &schedule, &mut rng).unwrap();
    let weight = store
        .vars_with_prefix(&["unet."])
        .into_iter()
        .find(|(n, _)| n.contains("mid_attn") && n.ends_with("weight"))
        .map(|(_, v)| v)
        .unwrap();
    let f = || {
        let cond = DenoiseConditions {
            geo: geo.clone(),
            ctx: ctx.as_tensor().clone(),
            ctx_valid: None,
        };
        diffusion_loss_with(&x0, &cond, &schedule, &unet, &draw).unwrap()
    };
    [
        fd_max_rel_err(&[&ctx], &f, 24, seed),
        fd_max_rel_err(&[&weight], &f, 24, seed + 1),
    ]
}

// ---------------------------------------------------------------------------
// captions

pub fn caption_corpus() -> Vec<String> {
    include_str!("../data/raw_captions.txt")
        .lines()
        .map(|l| l.replace("\\n", "\n"))
        .collect()
}

// ---------------------------------------------------------------------------
// distribution metrics

pub fn gaussian_set(n: usize, d: usize, shift: &[f64], rng: &mut ChaCha8Rng) -> tryon::metrics::FeatureSet {
    use rand_distr::StandardNormal;
    let v: Vec<f64> = (0..n * d)
        .map(|i| rng.sample::<f64, _>(StandardNormal) + shift.get(i % d).copied().unwrap_or(0.0))
        .collect();
    tryon::metrics::FeatureSet::new(n, d, v).unwrap()
}

/// FID between `N(0, I)` and `N(delta e_1, I)` samples; the population
/// value is `delta^2`.
pub fn fid_shifted_gaussians(n: usize, d: usize, delta: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian_set(n, d, &[], &mut rng);
    let b = gaussian_set(n, d, &[delta], &mut rng);
    tryon::metrics::fid(&a, &b).unwrap()
}

/// KID between independent same-distribution sets, repeated. Returns the
/// mean over repetitions and its standard error.
pub fn kid_null(reps: usize, n: usize, d: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..reps)
        .map(|_| {
            let a = gaussian_set(n, d, &[], &mut rng);
            let b = gaussian_set(n, d, &[], &mut rng);
            tryon::metrics::kid(&a, &b, &Default::default()).unwrap().value
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / reps as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
    (mean, (var / reps as f64).sqrt())
}

// ---------------------------------------------------------------------------
// flow and deformable convolution

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.dims(), b.dims());
    let d = (a - b).unwrap().to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    d.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Worst deviation (f64) of zero-offset deformable convolution from zero-padded
/// standard convolution over `cases` random 8x8 inputs.
pub fn deform_zero_offset_gap(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let b = rng.random_range(1..3);
        let c_in = rng.random_range(1..5);
        let c_out = rng.random_range(1..5);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let x = uniform(&[b, c_in, 8, 8], -1.0, 1.0, &mut rng);
        let w = uniform(&[c_out, c_in, k, k], -1.0, 1.0, &mut rng);
        let kernel = DeformableKernel {
            weights: w.clone(),
            bias: None,
            offsets: Tensor::zeros((b, 2 * k * k, 8, 8), DType::F64, &Device::Cpu).unwrap(),
        };
        let got = deform_conv(&x, &kernel).unwrap();
        let want = x.conv2d(&w, k / 2, 1, 1, 1).unwrap();
        worst = worst.max(max_abs_diff(&got, &want));
    }
    worst
}

/// Largest deviation from `compose(0, r) = r`, `compose(p, 0) = p`, and
/// `compose(const a, const b) = const(a + b)` away from the border.
pub fn flow_algebra_gap(h: usize, w: usize, a: (f64, f64), b: (f64, f64), seed: u64) -> f64 {
    use tryon::warp::{compose_flow, AppearanceFlow};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = AppearanceFlow::zeros(1, h, w, DType::F64).unwrap();
    let r = AppearanceFlow::new(uniform(&[1, 2, h, w], -3.0, 3.0, &mut rng)).unwrap();
    let left = max_abs_diff(compose_flow(&zero, &r).unwrap().tensor(), r.tensor());
    let right = max_abs_diff(compose_flow(&r, &zero).unwrap().tensor(), r.tensor());

    let fa = AppearanceFlow::constant(1, h, w, a.0, a.1, DType::F64).unwrap();
    let fb = AppearanceFlow::constant(1, h, w, b.0, b.1, DType::F64).unwrap();
    let sum = AppearanceFlow::constant(1, h, w, a.0 + b.0, a.1 + b.1, DType::F64).unwrap();
    let got = compose_flow(&fa, &fb).unwrap();
    // the sampled prev flow is zero-filled outside, so keep x + b inside
    let mx = b.0.abs().ceil() as usize + 1;
    let my = b.1.abs().ceil() as usize + 1;
    let crop = |t: &Tensor| t.narrow(2, my, h - 2 * my).unwrap().narrow(3, mx, w - 2 * mx).unwrap();
    let additive = max_abs_diff(&crop(got.tensor()), &crop(sum.tensor()));
    left.max(right).max(additive)
}

// ---------------------------------------------------------------------------
// diffusion

pub struct DiffusionContracts {
    pub oracle_loss: f64,
    /// `|loss - c^2|` for a predictor that is off by `c` everywhere.
    pub offset_err: f64,
    pub guided_cond_bits: bool,
    pub guided_uncond_bits: bool,
    /// Stack dims for one 512x384 sample.
    pub stack_dims: Vec<usize>,
}

fn same_bits(a: &Tensor, b: &Tensor) -> bool {
    let a = a.flatten_all().unwrap().to_vec1::<f32>().unwrap();
    let b = b.flatten_all().unwrap().to_vec1::<f32>().unwrap();
    a.len() == b.len() && a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits())
}

fn random_condition(b: usize, h: usize, w: usize, dtype: DType, rng: &mut ChaCha8Rng) -> GeometricCondition {
    let lat = |rng: &mut ChaCha8Rng| {
        LatentTensor::new(uniform(&[b, 4, h, w], -1.0, 1.0, rng).to_dtype(dtype).unwrap()).unwrap()
    };
    GeometricCondition::from_latent_maps(
        lat(rng),
        lat(rng),
        uniform(&[b, 1, h, w], 0.0, 1.0, rng).ge(0.5).unwrap().to_dtype(dtype).unwrap(),
        uniform(&[b, 3, h, w], -1.0, 1.0, rng).to_dtype(dtype).unwrap(),
    )
    .unwrap()
}

pub fn diffusion_contracts(seed: u64, offset: f64) -> DiffusionContracts {
    use tryon::generation::{assemble_geometric_condition, encode_latent, guided_predict, DeskCodec, FnPredictor, NoisePredictor};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = DiffusionSchedule::linear(50, 1e-4, 0.02).unwrap();

    // oracle and offset predictors see the exact noise of the draw
    let (b, h, w) = (2, 6, 5);
    let cond = DenoiseConditions {
        geo: random_condition(b, h, w, DType::F64, &mut rng),
        ctx: uniform(&[b, 3, 8], -1.0, 1.0, &mut rng),
        ctx_valid: None,
    };
    let x0 = LatentTensor::new(uniform(&[b, 4, h, w], -1.0, 1.0, &mut rng)).unwrap();
    let draw = NoiseDraw::sample(x0.tensor(), &schedule, &mut rng).unwrap();
    let eps = draw.eps.clone();
    let oracle = FnPredictor(move |_: &Tensor, _: &[usize], _: &Tensor| Ok(eps.clone()));
    let oracle_loss = diffusion_loss_with(&x0, &cond, &schedule, &oracle, &draw)
        .unwrap()
        .to_scalar::<f64>()
        .unwrap();
    let eps = draw.eps.clone();
    let shifted = FnPredictor(move |_: &Tensor, _: &[usize], _: &Tensor| Ok((&eps + offset)?));
    let off_loss = diffusion_loss_with(&x0, &cond, &schedule, &shifted, &draw)
        .unwrap()
        .to_scalar::<f64>()
        .unwrap();

    // guidance endpoints through a real denoiser
    let store = ParamStore::new(seed, DType::F32);
    let cfg = UNetConfig {
        channels: [8, 16],
        heads: 2,
        groups: 4,
        time_dim: 16,
    };
    let unet = TinyUNet::new(&store.root().pp("unet"), &cfg, 8).unwrap();
    let cond = DenoiseConditions {
        geo: random_condition(b, 8, 6, DType::F32, &mut rng),
        ctx: uniform(&[b, 3, 8], -1.0, 1.0, &mut rng).to_dtype(DType::F32).unwrap(),
        ctx_valid: None,
    };
    let null_text = uniform(&[8], -1.0, 1.0, &mut rng).to_dtype(DType::F32).unwrap();
    let uncond = cond.nulled(&null_text).unwrap();
    let x_t = uniform(&[b, 4, 8, 6], -1.0, 1.0, &mut rng).to_dtype(DType::F32).unwrap();
    let t = [7, 31];
    let pass = |c: &DenoiseConditions| unet.predict(&c.geo.stack(&x_t).unwrap(), &t, &c.ctx, c.ctx_valid.as_ref()).unwrap();
    let at = |s: f64| guided_predict(&unet, &x_t, &t, &cond, &uncond, s).unwrap();
    let guided_cond_bits = same_bits(&at(1.0), &pass(&cond));
    let guided_uncond_bits = same_bits(&at(0.0), &pass(&uncond));

    // shape contract at full resolution
    let codec = DeskCodec::new(DType::F32).unwrap();
    let img = |rng: &mut ChaCha8Rng| {
        let v: Vec<f32> = (0..3 * 512 * 384).map(|_| rng.random_range(-1.0..1.0)).collect();
        tryon::ImageTensor::from_vec(v, 3, 512, 384, tryon::ValueRange::Signed).unwrap()
    };
    let e_warp = encode_latent(&img(&mut rng), &codec).unwrap();
    let e_agn = encode_latent(&img(&mut rng), &codec).unwrap();
    let mask = Tensor::ones((1, 512, 384), DType::F32, &Device::Cpu).unwrap();
    let pose = Tensor::zeros((3, 512, 384), DType::F32, &Device::Cpu).unwrap();
    let z = LatentTensor::zeros(1, 64, 48, DType::F32).unwrap();
    let (_, stack) = assemble_geometric_condition(&e_warp, &e_agn, &mask, &pose, &z).unwrap();

    DiffusionContracts {
        oracle_loss,
        offset_err: (off_loss - offset * offset).abs(),
        guided_cond_bits,
        guided_uncond_bits,
        stack_dims: stack.dims().to_vec(),
    }
}

/// Random attribute records whose serialized caption does not parse back
/// to the same record.
pub fn round_trip_failures(n: usize, seed: u64) -> usize {
    use tryon::semantics::{parse_caption, serialize_caption, GarmentAttributes};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .filter(|_| {
            let a = GarmentAttributes::random(&mut rng);
            parse_caption(&serialize_caption(&a)).ok() != Some(a)
        })
        .count()
}

/// Corpus entries where cleaning a cleaned caption changes it.
pub fn clean_not_idempotent() -> Vec<String> {
    use tryon::semantics::clean_caption;
    caption_corpus()
        .into_iter()
        .filter(|raw| match clean_caption(raw) {
            Ok(once) => clean_caption(&once).ok().as_deref() != Some(once.as_str()),
            Err(_) => false,
        })
        .collect()
}

/// Every pairing of scripted primary/fallback behaviours, with and without
/// an annotation. Returns descriptions of runs that neither produced a
/// parsable caption from the expected source nor failed when nothing could
/// succeed.
pub fn fallback_chain_failures() -> Vec<String> {
    use tryon::semantics::{
        generate_caption, parse_caption, serialize_caption, CaptionClient, CaptionClients, CaptionPolicy, CaptionSource,
        ClientResponse, GarmentAttributes, ScriptedClient,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let good = GarmentAttributes::random(&mut rng);
    let other = GarmentAttributes::random(&mut rng);
    let garment = tryon::ImageTensor::filled(0.5, 3, 8, 6, tryon::ValueRange::Unit).unwrap();
    let modes: Vec<(&str, Vec<ClientResponse>)> = vec![
        ("ok", vec![ClientResponse::Caption(format!("Caption: \"{}\"", serialize_caption(&good)))]),
        ("timeout", vec![ClientResponse::Timeout]),
        ("timeout-then-ok", vec![ClientResponse::Timeout, ClientResponse::Caption(serialize_caption(&good))]),
        ("safety", vec![ClientResponse::SafetyRejection]),
        ("failure", vec![ClientResponse::Failure("HTTP 500".into())]),
        ("malformed", vec![ClientResponse::Caption("a nice shirt".into())]),
        ("empty", vec![ClientResponse::Caption("```\n```".into())]),
    ];
    let succeeds = |m: &str| m == "ok" || m == "timeout-then-ok";
    let policy = CaptionPolicy::default();
    let mut bad = Vec::new();
    let slots = std::iter::once(None).chain(modes.iter().map(Some));
    for p in slots.clone() {
        for f in slots.clone() {
            for annotated in [false, true] {
                let pc = p.map(|(n, s)| ScriptedClient::new(*n, s.clone()));
                let fc = f.map(|(n, s)| ScriptedClient::new(*n, s.clone()));
                let clients = CaptionClients {
                    primary: pc.as_ref().map(|c| c as &dyn CaptionClient),
                    fallback: fc.as_ref().map(|c| c as &dyn CaptionClient),
                };
                let annotation = annotated.then_some(&other);
                let label = format!("{:?}/{:?}/{annotated}", p.map(|m| m.0), f.map(|m| m.0));
                let expect = if p.is_some_and(|m| succeeds(m.0)) {
                    Some((CaptionSource::Primary, &good))
                } else if f.is_some_and(|m| succeeds(m.0)) {
                    Some((CaptionSource::Fallback, &good))
                } else if annotated {
                    Some((CaptionSource::LocalTemplate, &other))
                } else {
                    None
                };
                match (generate_caption(&garment, &clients, annotation, &policy), expect) {
                    (Ok(r), Some((src, attrs))) => {
                        if r.source != src || parse_caption(&r.text).ok().as_ref() != Some(attrs) {
                            bad.push(format!("{label}: got {:?} `{}`", r.source, r.text));
                        }
                    }
                    (Err(_), None) => {}
                    (Ok(r), None) => bad.push(format!("{label}: unexpected caption `{}`", r.text)),
                    (Err(e), Some(_)) => bad.push(format!("{label}: {e}")),
                }
            }
        }
    }
    bad
}

/// Per-condition drop rates of `mask_conditions` over `batches x batch`
/// items. Also checks that every dropped item really carries the null
/// value and every kept one is untouched.
pub fn dropout_audit(batches: usize, batch: usize, p: f64, seed: u64) -> [f64; 3] {
    use tryon::generation::mask_conditions;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, s, d) = (2, 2, 3, 4);
    let cond = DenoiseConditions {
        geo: random_condition(batch, h, w, DType::F32, &mut rng),
        ctx: uniform(&[batch, s, d], 1.0, 2.0, &mut rng).to_dtype(DType::F32).unwrap(),
        ctx_valid: None,
    };
    let null = Tensor::full(-7.0f32, d, &Device::Cpu).unwrap();
    let item = |t: &Tensor, i: usize| t.narrow(0, i, 1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
    let mut counts = [0usize; 3];
    for _ in 0..batches {
        let (out, drop) = mask_conditions(&cond, &null, p, &mut rng).unwrap();
        for i in 0..batch {
            let text = item(&out.ctx, i);
            assert_eq!(text.iter().all(|&v| v == -7.0), drop.text[i]);
            for (dropped, new, old) in [
                (drop.warp[i], out.geo.e_warp.tensor(), cond.geo.e_warp.tensor()),
                (drop.pose[i], &out.geo.pose, &cond.geo.pose),
            ] {
                let want = if dropped { vec![0.0; item(old, i).len()] } else { item(old, i) };
                assert_eq!(item(new, i), want);
            }
            for (c, b) in counts.iter_mut().zip([drop.text[i], drop.warp[i], drop.pose[i]]) {
                *c += b as usize;
            }
        }
    }
    counts.map(|c| c as f64 / (batches * batch) as f64)
}

/// Runs one ablation suite with the tiny config on a fixture.
pub fn tiny_ablation(fx: &Fixture, suite: tryon::harness::Suite) -> tryon::harness::AblationReport {
    use tryon::harness::{run_ablation, DatasetSplit};
    let work = fx.path(&format!("ablation_{suite}"));
    run_ablation(
        suite,
        &tiny_config(),
        &DatasetSplit {
            root: fx.root(),
            manifest: &fx.train,
        },
        &DatasetSplit {
            root: fx.root(),
            manifest: &fx.test,
        },
        &work,
    )
    .unwrap()
}
