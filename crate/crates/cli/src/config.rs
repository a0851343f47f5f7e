//! Run configuration: named presets, TOML overrides and seed plumbing.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use eae_core::loss::LossConfig;
use eae_core::nli::TrainConfig;
use eae_core::pairgen::SplitConfig;
use eae_core::pipeline::ExtractConfig;
use eae_core::TemplateRegistry;
use eae_model::{ModelConfig, NliClassifier, DEFAULT_ENCODER_ID};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Full-scale hyperparameters over a pretrained Arabic encoder.
    Paper,
    /// Tiny random encoder with a larger learning rate; runs on a laptop.
    Desk,
    /// `paper` run once per loss configuration.
    AblateLoss,
    /// `paper` trained once and scored with each template as test template.
    AblateTemplate,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
            Preset::AblateLoss => "ablate-loss",
            Preset::AblateTemplate => "ablate-template",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    #[default]
    Single,
    LossAblation,
    TemplateAblation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Tiny,
    Pretrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelChoice {
    pub kind: ModelKind,
    pub identifier: String,
    pub max_len: usize,
    /// Local directory with `config.json`, `tokenizer.json` and
    /// `model.safetensors`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained_dir: Option<PathBuf>,
}

impl ModelChoice {
    pub fn build(&self, seed: u64) -> Result<NliClassifier> {
        match self.kind {
            ModelKind::Tiny => {
                let mut cfg = ModelConfig::tiny();
                cfg.max_len = self.max_len;
                cfg.encoder.max_position_embeddings = self.max_len;
                cfg.identifier = self.identifier.clone();
                Ok(NliClassifier::new(cfg, seed)?)
            }
            ModelKind::Pretrained => self.build_pretrained(seed),
        }
    }

    #[cfg(feature = "pretrained")]
    fn build_pretrained(&self, seed: u64) -> Result<NliClassifier> {
        let dir = self
            .pretrained_dir
            .as_ref()
            .context("model.pretrained_dir must point at a downloaded encoder checkpoint")?;
        Ok(NliClassifier::from_pretrained(dir, &self.identifier, self.max_len, seed)?)
    }

    #[cfg(not(feature = "pretrained"))]
    fn build_pretrained(&self, _seed: u64) -> Result<NliClassifier> {
        bail!("pretrained encoders need a build with `--features pretrained`; use `--preset desk` for the tiny encoder")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    /// Mentions of the annotated corpus, looked up by sentence text.
    #[default]
    Gold,
    /// Scripted responses from a JSON file mapping text to spans.
    Mock,
    /// HTTP service configured through `EAE_NER_ENDPOINT` and friends.
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderChoice {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub output_dir: PathBuf,
    pub corpus_format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Relation sidecar for BIO corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            output_dir: PathBuf::from("eae-out"),
            corpus_format: "jsonl".into(),
            corpus: None,
            relations: None,
            dataset: None,
            checkpoint: None,
            templates: None,
        }
    }
}

/// Everything one command needs. Every random choice derives from `seed`,
/// which is copied into the split and training sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub experiment: Experiment,
    pub paths: Paths,
    pub split: SplitConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub model: ModelChoice,
    pub provider: ProviderChoice,
    pub extract: ExtractConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let paper = RunConfig {
            preset,
            seed: 42,
            experiment: Experiment::Single,
            paths: Paths::default(),
            split: SplitConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            model: ModelChoice {
                kind: ModelKind::Pretrained,
                identifier: DEFAULT_ENCODER_ID.into(),
                max_len: 128,
                pretrained_dir: None,
            },
            provider: ProviderChoice::default(),
            extract: ExtractConfig::default(),
        };
        match preset {
            Preset::Paper => paper,
            Preset::Desk => RunConfig {
                train: TrainConfig {
                    learning_rate: 1e-3,
                    ..TrainConfig::default()
                },
                model: ModelChoice {
                    kind: ModelKind::Tiny,
                    identifier: "tiny-random".into(),
                    max_len: 96,
                    pretrained_dir: None,
                },
                ..paper
            },
            Preset::AblateLoss => RunConfig {
                experiment: Experiment::LossAblation,
                ..paper
            },
            Preset::AblateTemplate => RunConfig {
                experiment: Experiment::TemplateAblation,
                ..paper
            },
        }
    }

    /// Starts from the preset (command line, then file, then `paper`) and
    /// overlays the file's tables key by key.
    pub fn resolve(file: Option<&Path>, preset: Option<Preset>, seed: Option<u64>) -> Result<Self> {
        let overlay = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                Some(text.parse::<toml::Table>().with_context(|| format!("parsing config {}", path.display()))?)
            }
            None => None,
        };
        let file_preset = match overlay.as_ref().and_then(|t| t.get("preset")) {
            Some(v) => Some(Preset::deserialize(v.clone()).context("unknown preset in config file")?),
            None => None,
        };
        let preset = preset.or(file_preset).unwrap_or(Preset::Paper);
        let mut base = toml::Table::try_from(RunConfig::preset(preset)).context("serializing preset")?;
        if let Some(overlay) = overlay {
            merge(&mut base, overlay);
        }
        base.insert("preset".into(), toml::Value::String(preset.name().into()));
        let mut cfg: RunConfig = base.try_into().context("invalid run configuration")?;
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        cfg.split.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.extract.validate()?;
        if self.model.max_len < 8 {
            bail!("model.max_len must be at least 8");
        }
        if i64::try_from(self.seed).is_err() {
            bail!("seed must fit in a signed 64-bit integer");
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<TemplateRegistry> {
        match &self.paths.templates {
            Some(p) => Ok(TemplateRegistry::load(p)?),
            None => Ok(TemplateRegistry::default()),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing run configuration")
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
