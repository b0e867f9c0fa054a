//! Run configuration: a strict JSON file that resolves to a complete,
//! hash-stable description of one experiment.
//!
//! Unknown keys are rejected everywhere. The top-level `seed` is the only
//! randomness knob: resolution derives every stage seed from it (data,
//! split, SFT, DPO, partition), overwriting whatever the sub-sections carry,
//! and the derived values are what the run directory's `config.json` records.
//! Re-running that file therefore reproduces the run exactly.

use crate::data::{SplitSpec, SyntheticSpec};
use crate::dpo::DpoConfig;
use crate::error::{Error, Result};
use crate::policy::{Arch, SftConfig};
use crate::trainer::TargetInit;
use crate::vocab::Vocabulary;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Network dimensions section; the vocabulary is always the default charset,
/// so `vocab_size` is implied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub context_window: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            context_window: 8,
            embedding_dim: 16,
            hidden_dim: 64,
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, vocab: &Vocabulary) -> Arch {
        Arch {
            context_window: self.context_window,
            embedding_dim: self.embedding_dim,
            hidden_dim: self.hidden_dim,
            vocab_size: vocab.size(),
        }
    }
}

/// Where the preference data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic(SyntheticSpec),
    Jsonl(Vec<PathBuf>),
}

/// Where the base model comes from: train it here, or load a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SftSource {
    Train(SftConfig),
    Load(PathBuf),
}

impl Default for SftSource {
    fn default() -> Self {
        SftSource::Train(SftConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dpo,
    #[default]
    Sdpo,
}

/// Chunking strategy for stepwise runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionConfig {
    EasyToHard,
    Random {
        #[serde(default)]
        t: Option<usize>,
    },
    Single,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig::EasyToHard
    }
}

/// Hashes recorded into a finished run's `config.json`. Accepted (and
/// ignored) on input so a recorded config can be fed straight back in.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunHashes {
    pub config: String,
    /// snapshot file name -> content hash
    pub snapshots: BTreeMap<String, String>,
}

/// Top-level experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub sft: SftSource,
    #[serde(default)]
    pub dpo: DpoConfig,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub target_init: TargetInit,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hashes: Option<RunHashes>,
}

impl RunConfig {
    /// Parses a config file, rejecting unknown keys.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// Applies CLI overrides and derives all stage seeds from the master
    /// seed. The result is self-contained: resolving it again is a no-op
    /// apart from re-deriving the same seeds.
    pub fn resolve(mut self, seed_override: Option<u64>, out_override: Option<PathBuf>) -> Self {
        if let Some(seed) = seed_override {
            self.seed = seed;
        }
        if let Some(out) = out_override {
            self.output_dir = Some(out);
        }
        if let DataConfig::Synthetic(spec) = &mut self.data {
            spec.seed = self.seed;
        }
        self.split.seed = self.seed.wrapping_add(1);
        if let SftSource::Train(sft) = &mut self.sft {
            sft.seed = self.seed.wrapping_add(2);
        }
        self.dpo.seed = self.seed.wrapping_add(3);
        self.hashes = None;
        self
    }

    /// Seed for the base-model initialization.
    pub fn init_seed(&self) -> u64 {
        self.seed
    }

    /// Seed for the random partitioner.
    pub fn partition_seed(&self) -> u64 {
        self.seed.wrapping_add(4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.context_window == 0
            || self.model.embedding_dim == 0
            || self.model.hidden_dim == 0
        {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        self.split.validate()?;
        self.dpo.validate()?;
        if let SftSource::Train(sft) = &self.sft {
            sft.validate()?;
        }
        if let PartitionConfig::Random { t: Some(0) } = self.partition {
            return Err(Error::Config("partition t must be >= 1".into()));
        }
        if let DataConfig::Jsonl(paths) = &self.data {
            if paths.is_empty() {
                return Err(Error::Config("data.jsonl needs at least one path".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of the config with the `hashes` field
    /// stripped, hex-encoded. Stable across load/store cycles.
    pub fn content_hash(&self) -> String {
        let mut stripped = self.clone();
        stripped.hashes = None;
        let bytes = serde_json::to_vec(&stripped).expect("config serialization cannot fail");
        crate::policy::hex_string(&Sha256::digest(&bytes))
    }

    pub fn output_dir(&self) -> Result<&PathBuf> {
        self.output_dir
            .as_ref()
            .ok_or_else(|| Error::Config("output_dir is required (config key or --out)".into()))
    }
}
