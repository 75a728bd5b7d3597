//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `ARCNETCK`, a little-endian `u32` version, a
//! little-endian `u64` metadata length, the metadata as JSON, then every
//! tensor's values as little-endian `f64` in directory order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ArcModel, ModelConfig};
use crate::optim::{AdamConfig, OptimState};
use crate::shift::{ShiftNet, ShiftNetConfig};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"ARCNETCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    section: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimMeta {
    pub section: String,
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    kind: String,
    seed: u64,
    config: serde_json::Value,
    config_hash: String,
    optimizers: Vec<OptimMeta>,
    tensors: Vec<TensorEntry>,
}

/// Generic container: named sections of named tensors plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub optimizers: Vec<OptimMeta>,
    pub sections: Vec<(String, ParamStore)>,
}

/// Hex SHA-256 of the compact JSON encoding of `config`.
pub fn config_hash(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn ck_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Result<&ParamStore> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| ck_err(format!("missing section {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut data = Vec::new();
        for (section, store) in &self.sections {
            for (name, t) in store.iter() {
                tensors.push(TensorEntry {
                    section: section.clone(),
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                });
                for &x in t.data() {
                    data.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let meta = Meta {
            kind: self.kind.clone(),
            seed: self.seed,
            config_hash: config_hash(&self.config),
            config: self.config.clone(),
            optimizers: self.optimizers.clone(),
            tensors,
        };
        let meta = serde_json::to_vec(&meta)?;
        let mut out = Vec::with_capacity(20 + meta.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(ck_err("not an arcnet checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(ck_err(format!("unsupported format version {version}")));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let meta_end = 20usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| ck_err("truncated metadata"))?;
        let meta: Meta = serde_json::from_slice(&bytes[20..meta_end])?;
        if config_hash(&meta.config) != meta.config_hash {
            return Err(ck_err("config hash mismatch"));
        }
        let mut pos = meta_end;
        let mut sections: Vec<(String, ParamStore)> = Vec::new();
        for entry in meta.tensors {
            let n: usize = entry.shape.iter().product();
            let end = pos
                .checked_add(n * 8)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| ck_err(format!("truncated data for {}", entry.name)))?;
            let values = bytes[pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos = end;
            if sections.last().is_none_or(|(s, _)| *s != entry.section) {
                if sections.iter().any(|(s, _)| *s == entry.section) {
                    return Err(ck_err(format!("section {} is not contiguous", entry.section)));
                }
                sections.push((entry.section.clone(), ParamStore::new()));
            }
            let store = &mut sections.last_mut().expect("pushed above").1;
            store.insert(entry.name, Tensor::new(entry.shape, values)?)?;
        }
        if pos != bytes.len() {
            return Err(ck_err(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Checkpoint {
            kind: meta.kind,
            seed: meta.seed,
            config: meta.config,
            optimizers: meta.optimizers,
            sections,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| ck_err(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    fn push_optimizer(&mut self, section: &str, params: &ParamStore, opt: &OptimState) -> Result<()> {
        let moments = |which: &[Vec<f64>]| -> Result<ParamStore> {
            let mut s = ParamStore::new();
            for ((name, t), m) in params.iter().zip(which) {
                s.insert(name, Tensor::new(t.shape().to_vec(), m.clone())?)?;
            }
            Ok(s)
        };
        self.sections.push((format!("{section}.adam_m"), moments(&opt.m)?));
        self.sections.push((format!("{section}.adam_v"), moments(&opt.v)?));
        self.optimizers.push(OptimMeta {
            section: section.to_string(),
            config: opt.config,
            step: opt.step,
        });
        Ok(())
    }

    /// Optimizer state saved for `section`, if any.
    pub fn optimizer(&self, section: &str) -> Result<Option<OptimState>> {
        let Some(meta) = self.optimizers.iter().find(|o| o.section == section) else {
            return Ok(None);
        };
        let flat = |s: &ParamStore| s.iter().map(|(_, t)| t.data().to_vec()).collect();
        Ok(Some(OptimState {
            config: meta.config,
            step: meta.step,
            m: flat(self.section(&format!("{section}.adam_m"))?),
            v: flat(self.section(&format!("{section}.adam_v"))?),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelCheckpointConfig {
    model: ModelConfig,
    shift: Option<ShiftNetConfig>,
}

/// Shift network checkpoint with its optimizer state.
pub fn save_shift(path: impl AsRef<Path>, net: &ShiftNet, optim: Option<&OptimState>, seed: u64) -> Result<()> {
    let mut ck = Checkpoint {
        kind: "shift".into(),
        seed,
        config: serde_json::to_value(&net.config)?,
        optimizers: Vec::new(),
        sections: vec![("shift".into(), net.store.clone())],
    };
    if let Some(opt) = optim {
        ck.push_optimizer("shift", &net.store, opt)?;
    }
    ck.save(path)
}

fn restore_shift(config: ShiftNetConfig, store: &ParamStore) -> Result<ShiftNet> {
    let mut net = ShiftNet::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    net.store.load_from(store)?;
    Ok(net)
}

pub struct LoadedShift {
    pub net: ShiftNet,
    pub optim: Option<OptimState>,
    pub seed: u64,
}

pub fn load_shift(path: impl AsRef<Path>) -> Result<LoadedShift> {
    let ck = Checkpoint::load(path)?;
    if ck.kind != "shift" {
        return Err(ck_err(format!("expected a shift checkpoint, found {:?}", ck.kind)));
    }
    let config: ShiftNetConfig = serde_json::from_value(ck.config.clone())?;
    Ok(LoadedShift {
        net: restore_shift(config, ck.section("shift")?)?,
        optim: ck.optimizer("shift")?,
        seed: ck.seed,
    })
}

/// Dialogue model checkpoint; embeds the shift network it was trained with.
pub fn save_model(
    path: impl AsRef<Path>,
    model: &ArcModel,
    model_optim: Option<&OptimState>,
    shift: Option<&ShiftNet>,
    shift_optim: Option<&OptimState>,
    seed: u64,
) -> Result<()> {
    let config = ModelCheckpointConfig {
        model: model.config.clone(),
        shift: shift.map(|s| s.config.clone()),
    };
    let mut ck = Checkpoint {
        kind: "model".into(),
        seed,
        config: serde_json::to_value(&config)?,
        optimizers: Vec::new(),
        sections: vec![("model".into(), model.store.clone())],
    };
    if let Some(s) = shift {
        ck.sections.push(("shift".into(), s.store.clone()));
    }
    if let Some(opt) = model_optim {
        ck.push_optimizer("model", &model.store, opt)?;
    }
    if let (Some(s), Some(opt)) = (shift, shift_optim) {
        ck.push_optimizer("shift", &s.store, opt)?;
    }
    ck.save(path)
}

pub struct LoadedModel {
    pub model: ArcModel,
    pub shift: Option<ShiftNet>,
    pub model_optim: Option<OptimState>,
    pub shift_optim: Option<OptimState>,
    pub seed: u64,
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let ck = Checkpoint::load(path)?;
    if ck.kind != "model" {
        return Err(ck_err(format!("expected a model checkpoint, found {:?}", ck.kind)));
    }
    let config: ModelCheckpointConfig = serde_json::from_value(ck.config.clone())?;
    let mut model = ArcModel::new(config.model, &mut ChaCha8Rng::seed_from_u64(0))?;
    model.store.load_from(ck.section("model")?)?;
    let shift = match config.shift {
        Some(c) => Some(restore_shift(c, ck.section("shift")?)?),
        None => None,
    };
    Ok(LoadedModel {
        model,
        shift,
        model_optim: ck.optimizer("model")?,
        shift_optim: ck.optimizer("shift")?,
        seed: ck.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dims, Modality};
    use crate::model::ShiftMode;
    use crate::shift::{HiddenActivation, ShiftInput};

    fn model() -> ArcModel {
        let cfg = ModelConfig {
            dims: Dims {
                text: 3,
                audio: 2,
                video: 2,
            },
            party_dim: 3,
            context_dim: 2,
            emotion_dim: 2,
            n_classes: 2,
            modalities: vec![Modality::Text, Modality::Video],
            mode: ShiftMode::WithShift,
            arc_bias: true,
            gate_grad: false,
        };
        ArcModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    fn net() -> ShiftNet {
        ShiftNet::new(
            ShiftNetConfig {
                input_dim: 3,
                hidden: 2,
                activation: HiddenActivation::Tanh,
                input: ShiftInput::Text,
            },
            &mut ChaCha8Rng::seed_from_u64(6),
        )
        .unwrap()
    }

    #[test]
    fn model_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = model();
        let s = net();
        let mut opt = OptimState::new(AdamConfig::default(), &m.store);
        let grads: Vec<Vec<f64>> = m.store.iter().map(|(_, t)| vec![0.25; t.len()]).collect();
        let mut m2 = m.clone();
        opt.adam_step(&mut m2.store, &grads).unwrap();
        save_model(&p, &m2, Some(&opt), Some(&s), None, 42).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(back.model, m2);
        assert_eq!(back.shift, Some(s));
        assert_eq!(back.model_optim, Some(opt));
        assert_eq!(back.shift_optim, None);
        assert_eq!(back.seed, 42);
    }

    #[test]
    fn shift_roundtrip_and_stable_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        save_shift(&a, &net(), None, 1).unwrap();
        save_shift(&b, &net(), None, 1).unwrap();
        assert_eq!(file_hash(&a).unwrap(), file_hash(&b).unwrap());
        assert_eq!(load_shift(&a).unwrap().net, net());
        assert!(load_model(&a).is_err());
    }

    #[test]
    fn corruption_is_detected() {
        let ck = Checkpoint {
            kind: "shift".into(),
            seed: 0,
            config: serde_json::to_value(&net().config).unwrap(),
            optimizers: vec![],
            sections: vec![("shift".into(), net().store)],
        };
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
