use std::path::{Path, PathBuf};

use blt_core::corpus::{CorpusFormat, LoadOptions, NoiseStrategy, NoiseTarget};
use blt_core::entropy::Smoothing;
use blt_core::exec::Exec;
use blt_core::model::ModelConfig;
use blt_core::patcher::{PatchScheme, PatchingConfig};
use blt_core::train::TrainConfig;
use blt_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The one document that drives every command. Command-line flags override its
/// keys; the resolved result is written into each run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub exec: Exec,
    pub data: DataConfig,
    /// Named architecture used when `model` is absent.
    pub model_preset: String,
    pub model: Option<ModelConfig>,
    pub patching: PatchingConfig,
    pub entropy: EntropyConfig,
    pub bpe: BpeConfig,
    pub train: TrainConfig,
    pub flops: FlopsConfig,
    pub noise: NoiseConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            exec: Exec::Parallel,
            data: DataConfig::default(),
            model_preset: "micro".into(),
            model: None,
            patching: PatchingConfig::new(PatchScheme::Strided { k: 4 }),
            entropy: EntropyConfig::default(),
            bpe: BpeConfig::default(),
            train: TrainConfig::default(),
            flops: FlopsConfig::default(),
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub format: CorpusFormat,
    pub strict: bool,
    /// Use only the first this-many bytes of the training corpus.
    pub max_train_bytes: Option<usize>,
    /// Without an eval file, every n-th training document is held out.
    pub holdout_every: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            eval: None,
            format: CorpusFormat::Plain,
            strict: false,
            max_train_bytes: None,
            holdout_every: 20,
        }
    }
}

impl DataConfig {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            format: self.format,
            strict: self.strict,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropyConfig {
    pub order: usize,
    pub alpha: f64,
    /// Trained model to load; when absent one is trained on the training corpus.
    pub model_path: Option<PathBuf>,
    /// Calibrate the entropy threshold to this mean patch size, replacing the configured one.
    pub target_patch_size: Option<f64>,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            order: 3,
            alpha: Smoothing::default().alpha,
            model_path: None,
            target_patch_size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BpeConfig {
    pub merges: usize,
}

impl Default for BpeConfig {
    fn default() -> Self {
        BpeConfig { merges: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlopsConfig {
    pub n_ctx: usize,
    /// Mean patch size as a decimal or fraction, e.g. `"4.5"` or `"9/2"`.
    pub patch_size: String,
    /// Target forward FLOPs per byte for `size-match`.
    pub target: Option<f64>,
    /// Latent width granularity of the rounded `size-match` answer.
    pub width_multiple: usize,
}

impl Default for FlopsConfig {
    fn default() -> Self {
        FlopsConfig {
            n_ctx: 1024,
            patch_size: "4.5".into(),
            target: None,
            width_multiple: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub strategy: NoiseStrategy,
    pub rate: Option<f64>,
    pub target: NoiseTarget,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            strategy: NoiseStrategy::Drop,
            rate: None,
            target: NoiseTarget::Both,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = match &self.model {
            Some(m) => m.clone(),
            None => ModelConfig::preset(&self.model_preset)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// SHA-256 over the command name and the resolved configuration.
    pub fn hash(&self, command: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(self.to_toml().as_bytes());
        h.finalize().into()
    }

    pub fn validate(&self) -> Result<()> {
        self.patching.scheme.validate()?;
        if self.entropy.order == 0 || self.entropy.order > blt_core::entropy::MAX_ORDER {
            return Err(Error::Config(format!("entropy order {} outside [1, 8]", self.entropy.order)));
        }
        if self.data.holdout_every < 2 {
            return Err(Error::Config("holdout_every must be at least 2".into()));
        }
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
