use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Decoupled (AdamW) decay instead of an L2 term in the gradient.
    pub decoupled: bool,
}

impl AdamConfig {
    pub fn adam(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled: false,
        }
    }

    pub fn adamw(lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            weight_decay,
            decoupled: true,
            ..Self::adam(lr, beta1, beta2)
        }
    }
}

/// Adam / AdamW over a fixed list of named variables, with moments that can
/// be written to and restored from a checkpoint.
pub struct Adam {
    config: AdamConfig,
    vars: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

const STATE_PREFIX: &str = "optim";

impl Adam {
    pub fn new(vars: Vec<(String, Var)>, config: AdamConfig) -> Result<Self> {
        let m = vars
            .iter()
            .map(|(_, v)| v.as_tensor().zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self {
            config,
            vars,
            m,
            v,
            t: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn vars(&self) -> &[(String, Var)] {
        &self.vars
    }

    /// Global L2 norm of the gradients of the tracked variables.
    pub fn grad_norm(&self, grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0;
        for (_, var) in &self.vars {
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += g
                    .to_dtype(DType::F64)?
                    .sqr()?
                    .sum_all()?
                    .to_scalar::<f64>()?;
            }
        }
        Ok(sq.sqrt())
    }

    /// One update. Gradients are rescaled to global norm `clip` first when
    /// given. Variables without a gradient are left untouched. Returns the
    /// pre-clipping gradient norm.
    pub fn step(&mut self, grads: &GradStore, clip: Option<f64>) -> Result<f64> {
        let norm = self.grad_norm(grads)?;
        if !norm.is_finite() {
            return Err(Error::Value(format!("non-finite gradient norm {norm}")));
        }
        let scale = match clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, (_, var)) in self.vars.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // moments must not hold on to this step's graph
            let theta = var.as_tensor().detach();
            let mut g = g.detach().affine(scale, 0.0)?;
            if c.weight_decay > 0.0 && !c.decoupled {
                g = (g + theta.affine(c.weight_decay, 0.0)?)?;
            }
            let m = (self.m[i].affine(c.beta1, 0.0)? + g.affine(1.0 - c.beta1, 0.0)?)?;
            let v = (self.v[i].affine(c.beta2, 0.0)? + g.sqr()?.affine(1.0 - c.beta2, 0.0)?)?;
            let denom = (v.affine(1.0 / bc2, 0.0)?.sqrt()? + c.eps)?;
            let mut update = m.affine(c.lr / bc1, 0.0)?.div(&denom)?;
            if c.weight_decay > 0.0 && c.decoupled {
                update = (update + theta.affine(c.lr * c.weight_decay, 0.0)?)?;
            }
            var.set(&(&theta - update)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(norm)
    }

    /// Moments as tensors plus the step counter as metadata.
    pub fn state(&self) -> (BTreeMap<String, Tensor>, BTreeMap<String, String>) {
        let mut tensors = BTreeMap::new();
        for (i, (name, _)) in self.vars.iter().enumerate() {
            tensors.insert(format!("{STATE_PREFIX}.m.{name}"), self.m[i].clone());
            tensors.insert(format!("{STATE_PREFIX}.v.{name}"), self.v[i].clone());
        }
        let mut meta = BTreeMap::new();
        meta.insert(format!("{STATE_PREFIX}.t"), self.t.to_string());
        meta.insert(
            format!("{STATE_PREFIX}.lr"),
            format!("{:e}", self.config.lr),
        );
        (tensors, meta)
    }

    pub fn load_state(
        &mut self,
        tensors: &HashMap<String, Tensor>,
        meta: &BTreeMap<String, String>,
    ) -> Result<()> {
        let t = meta
            .get(&format!("{STATE_PREFIX}.t"))
            .ok_or_else(|| Error::Checkpoint("optimizer step counter missing".into()))?;
        self.t = t
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad step counter `{t}`")))?;
        for (i, (name, var)) in self.vars.iter().enumerate() {
            for (slot, store) in [("m", &mut self.m), ("v", &mut self.v)] {
                let key = format!("{STATE_PREFIX}.{slot}.{name}");
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer state `{key}` missing")))?;
                if t.dims() != var.dims() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer state `{key}` has shape {:?}",
                        t.dims()
                    )));
                }
                store[i] = t.to_dtype(var.dtype())?;
            }
        }
        Ok(())
    }
}

/// A seeded generator whose position can be saved and restored exactly.
pub struct TrainRng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl TrainRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// `"<seed>:<word position>"`.
    pub fn state(&self) -> String {
        format!("{}:{}", self.seed, self.rng.get_word_pos())
    }

    pub fn restore(state: &str) -> Result<Self> {
        let bad = || Error::Checkpoint(format!("bad rng state `{state}`"));
        let (seed, pos) = state.split_once(':').ok_or_else(bad)?;
        let seed: u64 = seed.parse().map_err(|_| bad())?;
        let pos: u128 = pos.parse().map_err(|_| bad())?;
        let mut r = Self::new(seed);
        r.rng.set_word_pos(pos);
        Ok(r)
    }
}
