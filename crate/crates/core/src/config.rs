//! Run configuration: a TOML file plus repeatable `--set key=value`
//! overrides. Every field defaults to the strongest single-model
//! settings, so an empty config trains the full model.

use crate::classifier::{Activation, MlpConfig, NUM_CLASSES};
use crate::encoder::{ConnectionMode, EncoderConfig};
use crate::error::{Error, Result};
use crate::training::TrainConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Env var naming the directory against which relative data paths resolve.
pub const DATA_DIR_ENV: &str = "SHORTSTACK_DATA_DIR";

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<String>,
    pub aux: Option<String>,
    pub embeddings: Option<String>,
    pub dev: BTreeMap<String, String>,
    pub synthetic: Option<SyntheticSection>,
}

/// In-memory synthetic dataset, used when no JSONL paths are configured.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub num_train: usize,
    pub num_dev: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection { num_train: 3000, num_dev: 600, vocab_size: 64, max_len: 12 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub mode: String,
    pub layer_dims: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            mode: "full_shortcut".to_string(),
            layer_dims: vec![512, 1024, 2048],
            embed_dim: 300,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: String,
    pub dropout: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            hidden_layers: 2,
            hidden_units: 1600,
            activation: "relu".to_string(),
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub base_lr: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub snli_mix_rate: f64,
    pub fine_tune: bool,
    pub deterministic: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            batch_size: 32,
            base_lr: 0.0002,
            max_epochs: 10,
            seed: 0,
            snli_mix_rate: 0.15,
            fine_tune: true,
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".to_string() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub encoder: EncoderSection,
    pub classifier: ClassifierSection,
    pub training: TrainingSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Load from an optional file and apply `--set key=value` overrides in
    /// order; later overrides win.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut value: toml::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                text.parse()
                    .map_err(|e| Error::Config(format!("config file {}: {e}", p.display())))?
            }
            None => toml::Value::Table(toml::map::Map::new()),
        };
        for set in overrides {
            apply_override(&mut value, set)?;
        }
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_config()?.validate()?;
        self.mlp_config()?.validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        let mode: ConnectionMode = self.encoder.mode.parse()?;
        Ok(EncoderConfig {
            mode,
            layer_dims: self.encoder.layer_dims.clone(),
            embed_dim: self.encoder.embed_dim,
        })
    }

    pub fn mlp_config(&self) -> Result<MlpConfig> {
        let activation: Activation = self.classifier.activation.parse()?;
        Ok(MlpConfig {
            num_hidden_layers: self.classifier.hidden_layers,
            hidden_units: self.classifier.hidden_units,
            activation,
            dropout_rate: self.classifier.dropout,
            num_classes: NUM_CLASSES,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.training.batch_size,
            base_lr: self.training.base_lr,
            max_epochs: self.training.max_epochs,
            seed: self.training.seed,
            snli_mix_rate: self.training.snli_mix_rate,
            fine_tune: self.training.fine_tune,
            deterministic: self.training.deterministic,
        }
    }

    /// Resolved snapshot; parses back to an identical config.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialize")
    }

    /// Resolve a data path against SHORTSTACK_DATA_DIR when relative.
    pub fn resolve_path(&self, p: &str) -> PathBuf {
        let path = PathBuf::from(p);
        if path.is_relative() {
            if let Ok(base) = std::env::var(DATA_DIR_ENV) {
                return PathBuf::from(base).join(path);
            }
        }
        path
    }
}

/// Apply one `key.path=value` override into a TOML tree. The value is
/// parsed as a TOML literal, falling back to a bare string.
fn apply_override(root: &mut toml::Value, set: &str) -> Result<()> {
    let (key, raw) = set
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {set:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override {set:?} has an empty key")));
    }
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Value>() {
        Ok(toml::Value::Table(t)) => t.get("v").cloned().unwrap(),
        _ => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?} crosses a non-table value")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override {key:?} crosses a non-table value")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_strongest_model() {
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg.encoder.mode, "full_shortcut");
        assert_eq!(cfg.encoder.layer_dims, vec![512, 1024, 2048]);
        assert_eq!(cfg.classifier.hidden_layers, 2);
        assert_eq!(cfg.classifier.activation, "relu");
        assert_eq!(cfg.classifier.hidden_units, 1600);
        assert_eq!(cfg.training.base_lr, 0.0002);
        assert_eq!(cfg.training.batch_size, 32);
        assert!(cfg.training.fine_tune);
    }

    #[test]
    fn overrides_win_in_order() {
        let cfg = RunConfig::resolve(
            None,
            &[
                "encoder.mode=residual".to_string(),
                "encoder.layer_dims=[8, 8]".to_string(),
                "training.seed=9".to_string(),
                "training.seed=10".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.encoder.mode, "residual");
        assert_eq!(cfg.encoder.layer_dims, vec![8, 8]);
        assert_eq!(cfg.training.seed, 10);
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig::resolve(
            None,
            &["encoder.mode=word_shortcut".to_string(), "classifier.hidden_units=64".to_string()],
        )
        .unwrap();
        let text = cfg.to_toml();
        let reparsed: RunConfig = text.parse::<toml::Value>().unwrap().try_into().unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn invalid_field_rejected_with_message() {
        let err = RunConfig::resolve(None, &["encoder.mode=fancy".to_string()]).unwrap_err();
        assert!(err.to_string().contains("fancy"), "{err}");
        let err = RunConfig::resolve(None, &["encoder.bogus_field=1".to_string()]).unwrap_err();
        assert!(err.to_string().contains("bogus_field"), "{err}");
    }

    #[test]
    fn residual_unequal_dims_rejected_at_resolve() {
        let err = RunConfig::resolve(
            None,
            &["encoder.mode=residual".to_string(), "encoder.layer_dims=[4, 8]".to_string()],
        )
        .unwrap_err();
        assert!(err.to_string().contains("equal layer dims"), "{err}");
    }
}
