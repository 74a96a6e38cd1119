//! Layered run configuration: defaults, then the TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use drnet_core::augment::AugmentConfig;
use drnet_core::dataset::SplitSpec;
use drnet_core::imageproc::PreprocConfig;
use drnet_core::network::ModelConfig;
use drnet_core::training::TrainConfig;
use drnet_core::NUM_CLASSES;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub input_side: usize,
    pub channels: Vec<usize>,
    pub pooled_blocks: usize,
    pub hidden_units: usize,
    pub dropout: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default_config();
        ModelSection {
            input_side: d.input_side,
            channels: vec![16, 32, 64, 128, 128, 128, 128],
            pooled_blocks: 6,
            hidden_units: 2560,
            dropout: 0.5,
            bn_epsilon: d.bn_epsilon,
            bn_momentum: d.bn_momentum,
        }
    }
}

impl ModelSection {
    pub fn build(&self) -> Result<ModelConfig> {
        let mut c = ModelConfig::conv_net(
            self.input_side,
            &self.channels,
            self.pooled_blocks,
            self.hidden_units,
            NUM_CLASSES,
            self.dropout,
        );
        c.bn_epsilon = self.bn_epsilon;
        c.bn_momentum = self.bn_momentum;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizeSection {
    /// Use at most this many calibration images (in input order).
    pub calib_limit: Option<usize>,
}

impl Default for QuantizeSection {
    fn default() -> Self {
        QuantizeSection { calib_limit: Some(200) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub repetitions: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { repetitions: 20 }
    }
}

/// Everything a run depends on. The top-level `seed` drives every random
/// stream (initialization, shuffling, augmentation, splitting).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub preprocess: PreprocConfig,
    pub augment: AugmentConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub quantize: QuantizeSection,
    pub bench: BenchSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Pushes the global seed into every component and checks consistency.
    pub fn finalize(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.split.seed = self.seed;
        self.augment.seed = self.seed;
        self.train.augment = self.augment.clone();
        self.preprocess.validate()?;
        self.augment.validate()?;
        self.train.validate()?;
        if self.workers == Some(0) {
            bail!("workers must be at least 1");
        }
        Ok(self)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    /// SHA-256 over the canonical JSON form of the effective configuration.
    /// Output location and worker count do not change results, so they are
    /// left out of the hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.workers = None;
        let canonical = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{:02x}", b)).collect()
    }
}
