use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{load_archive, save_archive, ParamStore};

const PARAM_PREFIX: &str = "param.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Warp,
    Generation,
}

impl CheckpointKind {
    fn as_str(self) -> &'static str {
        match self {
            CheckpointKind::Warp => "warp",
            CheckpointKind::Generation => "generation",
        }
    }
}

/// Parameters, optimizer moments, progress counters and generator state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub fingerprint: String,
    pub step: u64,
    pub epoch: u64,
    /// Serialized training generator, see [`super::TrainRng::state`].
    pub rng: String,
    pub params: BTreeMap<String, Tensor>,
    pub optimizer: BTreeMap<String, Tensor>,
    /// Everything else: optimizer counters, phase, config text, upstream
    /// checkpoint hashes.
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<String> {
        let mut tensors: BTreeMap<String, Tensor> = self
            .params
            .iter()
            .map(|(k, v)| (format!("{PARAM_PREFIX}{k}"), v.clone()))
            .collect();
        tensors.extend(self.optimizer.iter().map(|(k, v)| (k.clone(), v.clone())));
        let mut meta = self.meta.clone();
        meta.insert("kind".into(), self.kind.as_str().into());
        meta.insert("fingerprint".into(), self.fingerprint.clone());
        meta.insert("step".into(), self.step.to_string());
        meta.insert("epoch".into(), self.epoch.to_string());
        meta.insert("rng".into(), self.rng.clone());
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        save_archive(path, &tensors, &meta)?;
        self.content_hash()
    }

    /// SHA-256 over sorted names, shapes and values of every tensor and the
    /// sorted metadata. Unlike the file bytes, this does not depend on how
    /// the archive orders its header.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (section, map) in [("param", &self.params), ("optim", &self.optimizer)] {
            for (k, v) in map {
                h.update(format!("{section}:{k}:{:?}:{:?};", v.dtype(), v.dims()).as_bytes());
                for x in v.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                    h.update(x.to_le_bytes());
                }
            }
        }
        let header = [
            ("kind", self.kind.as_str().to_string()),
            ("fingerprint", self.fingerprint.clone()),
            ("step", self.step.to_string()),
            ("epoch", self.epoch.to_string()),
            ("rng", self.rng.clone()),
        ];
        for (k, v) in header
            .iter()
            .map(|(k, v)| (*k, v.as_str()))
            .chain(self.meta.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        {
            h.update(format!("{k}={v};").as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, mut meta) = load_archive(path)?;
        let mut take = |k: &str| {
            meta.remove(k).ok_or_else(|| {
                Error::Checkpoint(format!("{}: metadata `{k}` missing", path.display()))
            })
        };
        let kind = match take("kind")?.as_str() {
            "warp" => CheckpointKind::Warp,
            "generation" => CheckpointKind::Generation,
            other => {
                return Err(Error::Checkpoint(format!(
                    "unknown checkpoint kind `{other}`"
                )))
            }
        };
        let fingerprint = take("fingerprint")?;
        let num = |s: String| {
            s.parse::<u64>()
                .map_err(|_| Error::Checkpoint(format!("bad counter `{s}`")))
        };
        let step = num(take("step")?)?;
        let epoch = num(take("epoch")?)?;
        let rng = take("rng")?;
        let mut params = BTreeMap::new();
        let mut optimizer = BTreeMap::new();
        for (k, v) in tensors {
            match k.strip_prefix(PARAM_PREFIX) {
                Some(name) => params.insert(name.to_string(), v),
                None => optimizer.insert(k, v),
            };
        }
        Ok(Self {
            kind,
            fingerprint,
            step,
            epoch,
            rng,
            params,
            optimizer,
            meta,
        })
    }

    /// Fails unless the checkpoint is of `kind` and was written under `fingerprint`.
    pub fn expect(&self, kind: CheckpointKind, fingerprint: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {} checkpoint, found {}",
                kind.as_str(),
                self.kind.as_str()
            )));
        }
        if self.fingerprint != fingerprint {
            return Err(Error::Provenance(format!(
                "checkpoint fingerprint {} does not match config {}",
                self.fingerprint, fingerprint
            )));
        }
        Ok(())
    }

    /// Writes the stored parameters into `store`, which must hold exactly
    /// the same names.
    pub fn restore_params(&self, store: &ParamStore) -> Result<()> {
        let map: HashMap<String, Tensor> = self.params.clone().into_iter().collect();
        store.assign(&map)
    }

    pub fn optimizer_map(&self) -> HashMap<String, Tensor> {
        self.optimizer.clone().into_iter().collect()
    }
}

/// Content hash of the checkpoint stored at `path`.
pub fn checkpoint_hash(path: &Path) -> Result<String> {
    Checkpoint::load(path)?.content_hash()
}
