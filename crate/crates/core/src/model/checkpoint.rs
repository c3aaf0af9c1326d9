//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `LGCMCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header (config,
//! training step, validation score, vocabulary, tensor names and shapes),
//! then every parameter's values as little-endian `f64`, followed by the
//! optimizer moments when present. Floats are stored bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LgcmConfig, Model};
use crate::error::{Error, Result};
use crate::trainer::OptimizerState;

pub const MAGIC: &[u8; 8] = b"LGCMCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: LgcmConfig,
    step: u64,
    valid_ppl: Option<f64>,
    vocab: Option<Vec<String>>,
    tensors: Vec<TensorEntry>,
    optimizer_step: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub step: u64,
    pub valid_ppl: Option<f64>,
    /// Vocabulary tokens in id order, so a checkpoint is self-contained.
    pub vocab: Option<Vec<String>>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Checkpoint {
            model,
            step: 0,
            valid_ppl: None,
            vocab: None,
            optimizer: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.model.config.clone(),
            step: self.step,
            valid_ppl: self.valid_ppl,
            vocab: self.vocab.clone(),
            tensors: self
                .model
                .params
                .iter()
                .map(|(_, name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n = self.model.parameter_count();
        let moments = if self.optimizer.is_some() { 2 * n } else { 0 };
        let mut out = Vec::with_capacity(20 + json.len() + 8 * (n + moments));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |vals: &[f64]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        for (_, _, t) in self.model.params.iter() {
            put(t.data());
        }
        if let Some(opt) = &self.optimizer {
            if opt.m.len() != self.model.params.len() || opt.v.len() != self.model.params.len() {
                return Err(Error::Checkpoint("optimizer state does not match the parameter set".into()));
            }
            opt.m.iter().for_each(|m| put(m));
            opt.v.iter().for_each(|v| put(v));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::Checkpoint(format!("corrupt checkpoint: {what}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint format version {version} is not supported (expected {VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body_start = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..body_start]).map_err(|e| corrupt(&format!("header: {e}")))?;

        let mut model = Model::build(header.config)?;
        if header.tensors.len() != model.params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors but its config builds {}",
                header.tensors.len(),
                model.params.len()
            )));
        }
        for ((_, name, t), entry) in model.params.iter().zip(&header.tensors) {
            if name != entry.name || t.shape() != entry.shape.as_slice() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {} {:?} does not match {} {:?} built from its config",
                    entry.name,
                    entry.shape,
                    name,
                    t.shape()
                )));
            }
        }
        let n = model.parameter_count();
        let moments = if header.optimizer_step.is_some() { 2 * n } else { 0 };
        let body = &bytes[body_start..];
        if body.len() != 8 * (n + moments) {
            return Err(corrupt(&format!("expected {} value bytes, found {}", 8 * (n + moments), body.len())));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for t in model.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = values.next().expect("length checked"));
        }
        let optimizer = header.optimizer_step.map(|step| {
            let mut take = || -> Vec<Vec<f64>> {
                model
                    .params
                    .iter()
                    .map(|(_, _, t)| (0..t.numel()).map(|_| values.next().expect("length checked")).collect())
                    .collect()
            };
            let m = take();
            let v = take();
            OptimizerState { step, m, v }
        });
        Ok(Checkpoint {
            model,
            step: header.step,
            valid_ppl: header.valid_ppl,
            vocab: header.vocab,
            optimizer,
        })
    }

    /// Writes atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks that the stored config equals `expected`.
    pub fn load_expecting(path: &Path, expected: &LgcmConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        check_config(&ckpt.model.config, expected)?;
        Ok(ckpt)
    }
}

/// Config error naming the first differing field.
pub fn check_config(found: &LgcmConfig, expected: &LgcmConfig) -> Result<()> {
    if found == expected {
        return Ok(());
    }
    let a = serde_json::to_value(found).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let b = serde_json::to_value(expected).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let field = a
        .as_object()
        .and_then(|a| {
            a.iter()
                .find(|(k, v)| b.get(k.as_str()) != Some(v))
                .map(|(k, v)| format!("{k} = {v} in checkpoint, {} expected", b[k.as_str()]))
        })
        .unwrap_or_else(|| "configs differ".into());
    Err(Error::Config(format!("checkpoint config mismatch: {field}")))
}
