use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::condition::GeometricCondition;
use super::denoiser::NoisePredictor;
use super::latent::{LatentTensor, LATENT_CHANNELS};
use crate::error::{arg_err, dim_err, Error, Result};

/// DDPM noise schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// `steps` betas spaced linearly from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return arg_err("schedule needs at least one step");
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Checks `0 < beta < 1`, nondecreasing betas and strictly decreasing
    /// cumulative products.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return arg_err("schedule needs at least one step");
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::Value(format!("betas must lie in (0, 1): {betas:?}")));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Value("betas must be nondecreasing".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        if alpha_bars.windows(2).any(|w| w[1] >= w[0]) || alpha_bars[0] >= 1.0 {
            return Err(Error::Value(
                "cumulative alphas must strictly decrease".into(),
            ));
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Keeps `steps` evenly spaced timesteps (always including the last) and
    /// recomputes betas so the kept steps share the original cumulative
    /// alphas. Returns the kept original indices and the shortened schedule.
    pub fn respaced(&self, steps: usize) -> Result<(Vec<usize>, DiffusionSchedule)> {
        let total = self.steps();
        if steps == 0 || steps > total {
            return arg_err(format!("cannot respace {total} steps to {steps}"));
        }
        if steps == total {
            return Ok(((0..total).collect(), self.clone()));
        }
        let mut kept: Vec<usize> = (0..steps)
            .map(|i| ((i + 1) as f64 * total as f64 / steps as f64).round() as usize - 1)
            .collect();
        kept.dedup();
        let mut betas = Vec::with_capacity(kept.len());
        let mut prev = 1.0;
        for &t in &kept {
            betas.push(1.0 - self.alpha_bars[t] / prev);
            prev = self.alpha_bars[t];
        }
        // respaced betas need not be monotone; validate the rest by hand
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::Value("respaced schedule is degenerate".into()));
        }
        let alpha_bars = kept.iter().map(|&t| self.alpha_bars[t]).collect();
        Ok((kept, DiffusionSchedule { betas, alpha_bars }))
    }
}

/// Standard-normal tensor drawn from `rng`, reproducible across platforms.
pub fn standard_normal<R: Rng + ?Sized>(
    shape: &[usize],
    dtype: DType,
    rng: &mut R,
) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

fn per_item(values: &[f64], dtype: DType) -> Result<Tensor> {
    Ok(
        Tensor::from_vec(values.to_vec(), (values.len(), 1, 1, 1), &Device::Cpu)?
            .to_dtype(dtype)?,
    )
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`, one `t` per batch item.
pub fn add_noise(
    x0: &Tensor,
    t: &[usize],
    eps: &Tensor,
    schedule: &DiffusionSchedule,
) -> Result<Tensor> {
    let b = x0.dim(0)?;
    if t.len() != b || eps.dims() != x0.dims() {
        return dim_err(format!(
            "x0 {:?}, eps {:?}, {} timesteps",
            x0.dims(),
            eps.dims(),
            t.len()
        ));
    }
    if let Some(bad) = t.iter().find(|&&s| s >= schedule.steps()) {
        return arg_err(format!("timestep {bad} outside 0..{}", schedule.steps()));
    }
    let a: Vec<f64> = t.iter().map(|&s| schedule.alpha_bar(s).sqrt()).collect();
    let s: Vec<f64> = t
        .iter()
        .map(|&s| (1.0 - schedule.alpha_bar(s)).sqrt())
        .collect();
    let dtype = x0.dtype();
    Ok((x0.broadcast_mul(&per_item(&a, dtype)?)? + eps.broadcast_mul(&per_item(&s, dtype)?)?)?)
}

/// The random part of one loss evaluation.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub t: Vec<usize>,
    pub eps: Tensor,
}

impl NoiseDraw {
    /// Uniform timesteps, then standard-normal noise shaped like `like`.
    pub fn sample<R: Rng + ?Sized>(
        like: &Tensor,
        schedule: &DiffusionSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        let b = like.dim(0)?;
        let t = (0..b)
            .map(|_| rng.random_range(0..schedule.steps()))
            .collect();
        let eps = standard_normal(like.dims(), like.dtype(), rng)?;
        Ok(Self { t, eps })
    }
}

/// Everything the denoiser sees besides the noisy latent.
#[derive(Debug, Clone)]
pub struct DenoiseConditions {
    pub geo: GeometricCondition,
    /// Encoded text, `(B, S, d_text)`.
    pub ctx: Tensor,
    /// `(B, S)` key validity; `None` means all valid.
    pub ctx_valid: Option<Tensor>,
}

impl DenoiseConditions {
    pub fn batch(&self) -> usize {
        self.geo.batch()
    }

    /// The same conditions with text, warped garment and pose all replaced
    /// by their null values.
    pub fn nulled(&self, null_text: &Tensor) -> Result<Self> {
        let all = vec![true; self.batch()];
        self.with_dropped(
            null_text,
            &ConditionDrop {
                text: all.clone(),
                warp: all.clone(),
                pose: all,
            },
        )
    }

    /// Applies a per-item drop pattern. Kept items are copied unchanged.
    pub fn with_dropped(&self, null_text: &Tensor, drop: &ConditionDrop) -> Result<Self> {
        let b = self.batch();
        if drop.text.len() != b || drop.warp.len() != b || drop.pose.len() != b {
            return dim_err(format!(
                "drop pattern for {} items, batch is {b}",
                drop.text.len()
            ));
        }
        let (_, s, d) = self.ctx.dims3()?;
        if null_text.dims() != [d] {
            return dim_err(format!(
                "null text {:?} vs context width {d}",
                null_text.dims()
            ));
        }
        let dtype = self.ctx.dtype();
        let null_row = null_text
            .to_dtype(dtype)?
            .reshape((1, 1, d))?
            .broadcast_as((1, s, d))?
            .contiguous()?;
        let ones = Tensor::ones((1, s), dtype, &Device::Cpu)?;
        let valid = match &self.ctx_valid {
            Some(v) => v.to_dtype(dtype)?,
            None => Tensor::ones((b, s), dtype, &Device::Cpu)?,
        };
        let warp = self.geo.e_warp.tensor();
        let pose = &self.geo.pose;
        let mut ctx_parts = Vec::with_capacity(b);
        let mut valid_parts = Vec::with_capacity(b);
        let mut warp_parts = Vec::with_capacity(b);
        let mut pose_parts = Vec::with_capacity(b);
        for i in 0..b {
            if drop.text[i] {
                ctx_parts.push(null_row.clone());
                valid_parts.push(ones.clone());
            } else {
                ctx_parts.push(self.ctx.narrow(0, i, 1)?);
                valid_parts.push(valid.narrow(0, i, 1)?);
            }
            let w = warp.narrow(0, i, 1)?;
            warp_parts.push(if drop.warp[i] { w.zeros_like()? } else { w });
            let p = pose.narrow(0, i, 1)?;
            pose_parts.push(if drop.pose[i] { p.zeros_like()? } else { p });
        }
        let geo = GeometricCondition::from_latent_maps(
            LatentTensor::new(Tensor::cat(&warp_parts, 0)?)?,
            self.geo.e_agnostic.clone(),
            self.geo.mask.clone(),
            Tensor::cat(&pose_parts, 0)?,
        )?;
        Ok(Self {
            geo,
            ctx: Tensor::cat(&ctx_parts, 0)?,
            ctx_valid: Some(Tensor::cat(&valid_parts, 0)?),
        })
    }
}

/// Which conditions were replaced by their null value, per batch item.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConditionDrop {
    pub text: Vec<bool>,
    pub warp: Vec<bool>,
    pub pose: Vec<bool>,
}

impl ConditionDrop {
    /// Independent Bernoulli(p) draws per item, in the order text, warp, pose.
    pub fn sample<R: Rng + ?Sized>(batch: usize, p: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return arg_err(format!("drop probability {p} outside [0, 1]"));
        }
        let mut out = Self::default();
        for _ in 0..batch {
            out.text.push(rng.random::<f64>() < p);
            out.warp.push(rng.random::<f64>() < p);
            out.pose.push(rng.random::<f64>() < p);
        }
        Ok(out)
    }
}

/// Replaces text (with the null row), warped garment and pose (with zeros),
/// each independently with probability `p`.
pub fn mask_conditions<R: Rng + ?Sized>(
    cond: &DenoiseConditions,
    null_text: &Tensor,
    p: f64,
    rng: &mut R,
) -> Result<(DenoiseConditions, ConditionDrop)> {
    let drop = ConditionDrop::sample(cond.batch(), p, rng)?;
    Ok((cond.with_dropped(null_text, &drop)?, drop))
}

/// Mean squared error between `draw.eps` and the prediction at the noised
/// latent.
pub fn diffusion_loss_with(
    x0: &LatentTensor,
    cond: &DenoiseConditions,
    schedule: &DiffusionSchedule,
    predictor: &dyn NoisePredictor,
    draw: &NoiseDraw,
) -> Result<Tensor> {
    let x_t = add_noise(x0.tensor(), &draw.t, &draw.eps, schedule)?;
    let stack = cond.geo.stack(&x_t)?;
    let pred = predictor.predict(&stack, &draw.t, &cond.ctx, cond.ctx_valid.as_ref())?;
    if pred.dims() != draw.eps.dims() {
        return dim_err(format!(
            "prediction {:?} vs noise {:?}",
            pred.dims(),
            draw.eps.dims()
        ));
    }
    let eps = draw.eps.to_dtype(pred.dtype())?;
    Ok((pred - eps)?.sqr()?.mean_all()?)
}

/// Draws timesteps and noise from `rng`, then evaluates the loss.
pub fn diffusion_loss<R: Rng + ?Sized>(
    x0: &LatentTensor,
    cond: &DenoiseConditions,
    schedule: &DiffusionSchedule,
    predictor: &dyn NoisePredictor,
    rng: &mut R,
) -> Result<Tensor> {
    let draw = NoiseDraw::sample(x0.tensor(), schedule, rng)?;
    diffusion_loss_with(x0, cond, schedule, predictor, &draw)
}

/// Two denoiser passes, conditional and fully nulled, combined as
/// `s * eps_c + (1 - s) * eps_u`. That form is algebraically the usual
/// `eps_u + s (eps_c - eps_u)` and returns either pass bit-exactly at
/// `s = 1` and `s = 0`.
pub fn guided_predict(
    predictor: &dyn NoisePredictor,
    x_t: &Tensor,
    t: &[usize],
    cond: &DenoiseConditions,
    uncond: &DenoiseConditions,
    scale: f64,
) -> Result<Tensor> {
    let eps_c = predictor.predict(&cond.geo.stack(x_t)?, t, &cond.ctx, cond.ctx_valid.as_ref())?;
    let eps_u = predictor.predict(
        &uncond.geo.stack(x_t)?,
        t,
        &uncond.ctx,
        uncond.ctx_valid.as_ref(),
    )?;
    Ok((eps_c.affine(scale, 0.0)? + eps_u.affine(1.0 - scale, 0.0)?)?)
}

/// Ancestral DDPM sampling from `z ~ N(0, I)`. `timesteps` maps each step of
/// `schedule` to the index handed to the predictor (identity for a full
/// schedule, the kept indices for a respaced one).
pub fn sample<R: Rng + ?Sized>(
    predictor: &dyn NoisePredictor,
    cond: &DenoiseConditions,
    uncond: &DenoiseConditions,
    schedule: &DiffusionSchedule,
    timesteps: &[usize],
    scale: f64,
    rng: &mut R,
) -> Result<LatentTensor> {
    if timesteps.len() != schedule.steps() {
        return arg_err(format!(
            "{} timestep labels for a {}-step schedule",
            timesteps.len(),
            schedule.steps()
        ));
    }
    let (h, w) = cond.geo.hw();
    let b = cond.batch();
    let dtype = cond.geo.e_agnostic.tensor().dtype();
    let mut x = standard_normal(&[b, LATENT_CHANNELS, h, w], dtype, rng)?;
    for i in (0..schedule.steps()).rev() {
        let eps = guided_predict(predictor, &x, &vec![timesteps[i]; b], cond, uncond, scale)?;
        let ab = schedule.alpha_bar(i);
        let x0_hat = ((&x - eps.affine((1.0 - ab).sqrt(), 0.0)?)? / ab.sqrt())?;
        if i == 0 {
            x = x0_hat;
            break;
        }
        let ab_prev = schedule.alpha_bar(i - 1);
        let beta = schedule.beta(i);
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = beta * (1.0 - ab_prev) / (1.0 - ab);
        let z = standard_normal(x.dims(), dtype, rng)?;
        x = ((x0_hat.affine(c0, 0.0)? + x.affine(ct, 0.0)?)? + z.affine(var.sqrt(), 0.0)?)?;
    }
    LatentTensor::new(x)
}
