//! Experiment configuration: a versioned, human-editable TOML schema that
//! maps one-to-one onto the approaches of the experiment grid.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use risktext::corpus::{Provenance, RiskLevel};
use risktext::encoder::EncoderDims;
use risktext::preprocess::PreprocessConfig;
use risktext::trainer::{OptimizerKind, TrainConfig};
use risktext::views::ViewStrategy;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Baseline,
    Tap,
    Mvl,
    Pl,
    PlMvl,
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Approach::Baseline => "baseline",
            Approach::Tap => "tap",
            Approach::Mvl => "mvl",
            Approach::Pl => "pl",
            Approach::PlMvl => "pl_mvl",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Paths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlabeled: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap_checkpoint: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessSection {
    pub max_passage_len: usize,
    pub passage_cap: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub names: Option<PathBuf>,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            max_passage_len: 128,
            passage_cap: 100,
            stopwords: None,
            names: None,
        }
    }
}

impl PreprocessSection {
    /// Materializes the library config, reading list files when configured.
    pub fn to_config(&self, seed: u64) -> Result<PreprocessConfig> {
        let mut config = PreprocessConfig {
            max_passage_len: self.max_passage_len,
            passage_cap: self.passage_cap,
            seed,
            ..PreprocessConfig::default()
        };
        if let Some(path) = &self.stopwords {
            config.stopwords = read_word_list(path)
                .with_context(|| format!("stopword list {}", path.display()))?;
        }
        if let Some(path) = &self.names {
            config.name_lexicon =
                read_word_list(path).with_context(|| format!("name lexicon {}", path.display()))?;
        }
        Ok(config)
    }
}

fn read_word_list(path: &Path) -> Result<std::collections::HashSet<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSection {
    pub dim: usize,
    pub layers: usize,
    pub min_freq: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            dim: EncoderDims::DEFAULT_DIM,
            layers: EncoderDims::DEFAULT_LAYERS,
            min_freq: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub patience: usize,
    pub kl_weight: f64,
    pub valid_fraction: f64,
    pub tap_epochs: usize,
    pub tap_patience: usize,
    /// Epoch budget for sweep cells (shorter than full training runs).
    pub sweep_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            patience: t.patience,
            kl_weight: t.kl_weight,
            valid_fraction: 0.2,
            tap_epochs: t.tap_epochs,
            tap_patience: t.tap_patience,
            sweep_epochs: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewSection {
    pub kind: ViewKind,
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_mask_rate() -> f64 {
    ViewStrategy::DEFAULT_MASK_RATE
}

fn default_k() -> usize {
    ViewStrategy::DEFAULT_K
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    WordMask,
    SentMask,
    BegEd,
    KSum,
}

impl ViewSection {
    pub fn to_strategy(&self) -> ViewStrategy {
        match self.kind {
            ViewKind::WordMask => ViewStrategy::WordMask {
                mask_rate: self.mask_rate,
            },
            ViewKind::SentMask => ViewStrategy::SentMask {
                mask_rate: self.mask_rate,
            },
            ViewKind::BegEd => ViewStrategy::BegEd,
            ViewKind::KSum => ViewStrategy::KSum { k: self.k },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlSource {
    pub id: String,
    pub path: PathBuf,
    /// Single letter a-d. Absent means the source's own (gold) labels are
    /// kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assigned: Option<String>,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

impl PlSource {
    pub fn assigned_level(&self) -> Result<Option<RiskLevel>> {
        match &self.assigned {
            None => Ok(None),
            Some(s) => {
                let c = s.chars().next().unwrap_or(' ');
                RiskLevel::from_letter(c)
                    .map(Some)
                    .ok_or_else(|| anyhow::anyhow!("invalid assigned label '{s}' (use a|b|c|d)"))
            }
        }
    }

    pub fn provenance(&self) -> Provenance {
        let id = self.id.to_lowercase();
        if id.contains("anx") {
            Provenance::PseudoAnxiety
        } else if id.contains("depr") {
            Provenance::PseudoDepression
        } else {
            Provenance::PseudoTaskC
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlSection {
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    pub sources: Vec<PlSource>,
}

fn default_ratio() -> f64 {
    0.08
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub approach: Approach,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<ViewSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pl: Option<PlSection>,
}

fn default_seed() -> u64 {
    42
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// Rejects approach/field mismatches before any compute starts.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!("unsupported config version {} (expected {CONFIG_VERSION})", self.version);
        }
        let needs_view = matches!(self.approach, Approach::Mvl | Approach::PlMvl);
        let needs_pl = matches!(self.approach, Approach::Pl | Approach::PlMvl);
        if needs_view && self.view.is_none() {
            bail!("approach '{}' requires a [view] section", self.approach);
        }
        if !needs_view && self.view.is_some() {
            bail!("approach '{}' must not set a [view] section", self.approach);
        }
        if needs_pl {
            let pl = self
                .pl
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("approach '{}' requires a [pl] section", self.approach))?;
            if pl.sources.is_empty() {
                bail!("[pl] must declare at least one source");
            }
            if pl.ratio.is_nan() || pl.ratio < 0.0 {
                bail!("pl.ratio must be nonnegative");
            }
            for s in &pl.sources {
                s.assigned_level()?;
                if s.weight.is_nan() || s.weight <= 0.0 {
                    bail!("pl source '{}' weight must be positive", s.id);
                }
            }
        } else if self.pl.is_some() {
            bail!("approach '{}' must not set a [pl] section", self.approach);
        }
        if matches!(self.approach, Approach::Tap)
            && self.paths.unlabeled.is_none()
            && self.paths.tap_checkpoint.is_none()
        {
            bail!("approach 'tap' needs paths.unlabeled (to pre-train) or paths.tap_checkpoint");
        }
        if !(self.train.valid_fraction > 0.0 && self.train.valid_fraction < 1.0) {
            bail!("train.valid_fraction must be in (0, 1)");
        }
        Ok(())
    }

    /// Library-level training config for this experiment.
    pub fn train_config(&self, epochs_override: Option<usize>) -> TrainConfig {
        TrainConfig {
            epochs: epochs_override.unwrap_or(self.train.epochs),
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            optimizer: self.train.optimizer,
            patience: self.train.patience,
            view: self.view.as_ref().map(|v| v.to_strategy()),
            kl_weight: self.train.kl_weight,
            seed: self.seed,
            tap_epochs: self.train.tap_epochs,
            tap_patience: self.train.tap_patience,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing config snapshot")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_toml() -> String {
        r#"
version = 1
approach = "baseline"
seed = 7

[paths]
train = "data/train.jsonl"
"#
        .to_string()
    }

    #[test]
    fn parses_minimal_config() {
        let config: ExperimentConfig = toml::from_str(&base_toml()).unwrap();
        config.validate().unwrap();
        assert_eq!(config.train.epochs, 20);
        assert_eq!(config.train.batch_size, 32);
        assert_eq!(config.encoder.dim, 64);
        assert_eq!(config.preprocess.max_passage_len, 128);
    }

    #[test]
    fn baseline_rejects_view_section() {
        let toml_text = base_toml() + "\n[view]\nkind = \"word_mask\"\n";
        let config: ExperimentConfig = toml::from_str(&toml_text).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn mvl_requires_view_section() {
        let toml_text = base_toml().replace("baseline", "mvl");
        let config: ExperimentConfig = toml::from_str(&toml_text).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn pl_requires_sources() {
        let toml_text = base_toml().replace("baseline", "pl") + "\n[pl]\nsources = []\n";
        let config: ExperimentConfig = toml::from_str(&toml_text).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn pl_source_roundtrip() {
        let toml_text = base_toml().replace("baseline", "pl")
            + r#"
[pl]
ratio = 0.08

[[pl.sources]]
id = "depression"
path = "data/depression.jsonl"
assigned = "c"
"#;
        let config: ExperimentConfig = toml::from_str(&toml_text).unwrap();
        config.validate().unwrap();
        let pl = config.pl.as_ref().unwrap();
        assert_eq!(pl.sources[0].assigned_level().unwrap(), Some(RiskLevel::MediumRisk));
        assert_eq!(pl.sources[0].provenance(), Provenance::PseudoDepression);

        let snapshot = config.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&snapshot).unwrap();
        back.validate().unwrap();
        assert_eq!(back.pl.unwrap().sources[0].id, "depression");
    }
}
