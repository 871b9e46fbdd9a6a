use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use genrank::backbone::ModelConfig;
use genrank::data::SyntheticConfig;
use genrank::evaluation::{EvalConfig, YhatMode};
use genrank::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Everything a run needs. `seed` drives every random stream; the nested
/// seed keys are overwritten from it when the config is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub embeddings: Option<PathBuf>,
    pub sequences: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    /// Most recent events kept per user when loading sequences.
    pub max_history: usize,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            embeddings: None,
            sequences: None,
            codebook: None,
            max_history: 1000,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    pub k: usize,
    pub s4_max: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { k: 32, s4_max: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Valid,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub beam: usize,
    pub retrieval: usize,
    pub window: usize,
    pub constrained: bool,
    pub yhat: YhatMode,
    pub split: SplitName,
    /// Evaluate only the first `limit` instances; 0 means all.
    pub limit: usize,
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection {
            beam: e.beam,
            retrieval: e.retrieval,
            window: e.window,
            constrained: e.constrained,
            yhat: e.yhat,
            split: SplitName::Test,
            limit: 0,
            checkpoint: None,
        }
    }
}

impl EvalSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            beam: self.beam,
            retrieval: self.retrieval,
            window: self.window,
            constrained: self.constrained,
            yhat: self.yhat,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataConfig::default(),
            tokenizer: TokenizerConfig::default(),
            model: ModelConfig::default(),
            stage1: TrainConfig::default(),
            stage2: TrainConfig {
                total_steps: 1000,
                warmup: 50,
                lr: 1e-4,
                batch: 8,
                ..TrainConfig::default()
            },
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Propagates the run seed into every component.
    pub fn resolve(mut self) -> Self {
        let s = self.seed;
        self.data.synthetic.seed = s;
        self.model.seed = s;
        self.stage1.seed = s;
        self.stage2.seed = s;
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serializing config")?;
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        match value {
            Some(p) => Ok(p),
            None => bail!("no {key} given; set it in the config file or pass the flag"),
        }
    }
}

/// Where a file output's resolved config goes: `eval.csv` -> `eval.config.toml`.
pub fn config_path_for(out: &Path) -> PathBuf {
    out.with_extension("config.toml")
}
