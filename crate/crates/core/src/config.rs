//! Run configuration: one TOML file with explicit sections covering data
//! paths, model shape, training, generation and metric options.
//!
//! ```toml
//! seed = 0
//! output_dir = "runs/fixture"
//!
//! [data]
//! train = "data/train.jsonl"
//! valid = "data/valid.jsonl"
//! test = "data/test.jsonl"
//! min_freq = 1
//!
//! [model]
//! d = 64
//! variant = "LGCM"
//!
//! [train]
//! lr = 1e-3
//! max_steps = 500
//! ```
//!
//! Unknown keys are errors. Relative paths are resolved against the
//! directory holding the config file, and every run writes the resolved
//! config (absolute paths, all defaults spelled out) next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::GenerationConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricOptions;
use crate::model::{LgcmConfig, Variant};
use crate::trainer::TrainConfig;

/// File name of the resolved-config snapshot inside an output directory.
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    pub valid: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Existing vocabulary file; built from `train` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
}

fn default_min_freq() -> usize {
    2
}

/// Model shape without the vocabulary size, which comes from the
/// vocabulary, and without a seed, which is the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d: usize,
    pub heads: usize,
    pub n_local: usize,
    pub n_global: usize,
    pub n_dec: usize,
    pub n_max: usize,
    pub l_utt_max: usize,
    pub variant: Variant,
    pub dropout: f64,
    pub init_std: f64,
    pub scale_embeddings: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = LgcmConfig::desk(0);
        ModelSection {
            d: c.d,
            heads: c.heads,
            n_local: c.n_local,
            n_global: c.n_global,
            n_dec: c.n_dec,
            n_max: c.n_max,
            l_utt_max: c.l_utt_max,
            variant: c.variant,
            dropout: c.dropout,
            init_std: c.init_std,
            scale_embeddings: c.scale_embeddings,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub metrics: MetricOptions,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let base = if base.as_os_str().is_empty() {
            std::env::current_dir()?
        } else {
            base.canonicalize()?
        };
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.train);
        fix(&mut self.data.valid);
        self.data.test.iter_mut().for_each(fix);
        self.data.vocab.iter_mut().for_each(fix);
    }

    /// The run seed drives both initialization and shuffling; a different
    /// `train.seed` is rejected instead of silently overridden.
    pub fn validate(&self) -> Result<()> {
        if self.train.seed != 0 && self.train.seed != self.seed {
            return Err(Error::Config(format!(
                "train.seed = {} conflicts with seed = {}; set the seed once at top level",
                self.train.seed, self.seed
            )));
        }
        if self.data.min_freq == 0 {
            return Err(Error::Config("data.min_freq must be at least 1".into()));
        }
        self.train_config().validate()?;
        self.generation.validate()?;
        if !(self.metrics.rouge_beta > 0.0 && self.metrics.rouge_beta.is_finite()) {
            return Err(Error::Config("metrics.rouge_beta must be positive".into()));
        }
        self.model_config(8).validate()
    }

    pub fn model_config(&self, vocab_size: usize) -> LgcmConfig {
        let m = &self.model;
        LgcmConfig {
            d: m.d,
            heads: m.heads,
            n_local: m.n_local,
            n_global: m.n_global,
            n_dec: m.n_dec,
            vocab_size,
            n_max: m.n_max,
            l_utt_max: m.l_utt_max,
            variant: m.variant,
            dropout: m.dropout,
            seed: self.seed,
            init_std: m.init_std,
            scale_embeddings: m.scale_embeddings,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Data file for a split name (`train`, `valid` or `test`).
    pub fn split_path(&self, split: &str) -> Result<&Path> {
        match split {
            "train" => Ok(&self.data.train),
            "valid" => Ok(&self.data.valid),
            "test" => self
                .data
                .test
                .as_deref()
                .ok_or_else(|| Error::Config("no data.test path configured".into())),
            other => Err(Error::Config(format!("unknown split {other:?}; expected train, valid or test"))),
        }
    }

    /// The config with every default spelled out and the run seed copied
    /// into the training section.
    pub fn resolved(&self) -> RunConfig {
        RunConfig {
            train: self.train_config(),
            ..self.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the resolved snapshot into `dir` and returns its path.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_CONFIG);
        let text = format!("# resolved run configuration (seed = {})\n{}", self.seed, self.resolved().to_toml()?);
        fs::write(&path, text)?;
        Ok(path)
    }
}
