//! The JSON run-configuration file: sections for data, model, loss, train,
//! tokenizer, serve, and output paths. Unknown keys are rejected and all
//! values validated on load.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use glassguard_core::corpus::CountMode;
use glassguard_core::loss::LossConfig;
use glassguard_core::net::EncoderConfig;
use glassguard_core::trainer::{SelectionMode, TrainConfig};
use glassguard_core::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub serve: ServeSection,
    #[serde(default)]
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d_model: 32,
            n_layers: 1,
            n_heads: 4,
            d_ff: 64,
            max_len: 64,
            dropout: 0.0,
        }
    }
}

impl ModelSection {
    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            dropout: self.dropout,
        }
    }
}

/// Optional per-field overrides on top of a named preset.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub preset: Option<String>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub weight_decay: Option<f64>,
    pub grad_clip_norm: Option<f64>,
    pub selection: Option<SelectionMode>,
}

impl TrainSection {
    pub fn resolve(&self, loss: LossConfig) -> Result<TrainConfig> {
        let mut config = match self.preset.as_deref() {
            None | Some("desk") => TrainConfig::desk_preset(),
            Some("fine-tune") => TrainConfig::fine_tune_preset(),
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown train preset `{other}` (expected \"desk\" or \"fine-tune\")"
                )))
            }
        };
        if let Some(v) = self.learning_rate {
            config.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.weight_decay {
            config.weight_decay = v;
        }
        if let Some(v) = self.grad_clip_norm {
            config.grad_clip_norm = v;
        }
        if let Some(v) = self.selection {
            config.selection = v;
        }
        config.loss = loss;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSection {
    pub min_freq: usize,
    pub count_mode: CountMode,
    pub epsilon: f64,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        TokenizerSection {
            min_freq: 2,
            count_mode: CountMode::PromptLabel,
            epsilon: glassguard_core::corpus::DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSection {
    pub bind: String,
    pub request_cap_bytes: usize,
    pub threads: usize,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection {
            bind: "127.0.0.1:8787".to_string(),
            request_cap_bytes: 64 * 1024,
            threads: 4,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            checkpoints: PathBuf::from("checkpoints"),
            reports: PathBuf::from("reports"),
        }
    }
}

impl AppConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let raw = std::fs::read_to_string(path.as_ref())?;
        let config: AppConfig = serde_json::from_str(&raw)
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.tokenizer.min_freq == 0 {
            return Err(Error::Config("tokenizer.min_freq must be >= 1".to_string()));
        }
        if !(self.tokenizer.epsilon > 0.0) {
            return Err(Error::Config("tokenizer.epsilon must be > 0".to_string()));
        }
        if self.serve.threads == 0 || self.serve.request_cap_bytes == 0 {
            return Err(Error::Config(
                "serve.threads and serve.request_cap_bytes must be positive".to_string(),
            ));
        }
        // Full model validation happens once vocab_size is known; check the
        // divisibility constraint early since it is config-only.
        self.model.encoder_config(16).validate()?;
        self.train.resolve(self.loss)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_config(json: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(json.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_config_loads_with_defaults() {
        let f = write_config(r#"{"data": {"train": "train.jsonl"}}"#);
        let config = AppConfig::load(f.path()).unwrap();
        assert_eq!(config.model.d_model, 32);
        assert_eq!(config.tokenizer.min_freq, 2);
        let train = config.train.resolve(config.loss).unwrap();
        assert_eq!(train.epochs, 30);
        assert_eq!(train.seed, 42);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write_config(r#"{"data": {"train": "t"}, "extra_section": 1}"#);
        assert!(AppConfig::load(f.path()).is_err());
        let f = write_config(r#"{"data": {"train": "t", "nope": 2}}"#);
        assert!(AppConfig::load(f.path()).is_err());
        let f = write_config(r#"{"data": {"train": "t"}, "loss": {"gamm": 2}}"#);
        assert!(AppConfig::load(f.path()).is_err());
    }

    #[test]
    fn fine_tune_preset_with_overrides() {
        let f = write_config(
            r#"{"data": {"train": "t"}, "train": {"preset": "fine-tune", "epochs": 5}}"#,
        );
        let config = AppConfig::load(f.path()).unwrap();
        let train = config.train.resolve(config.loss).unwrap();
        assert_eq!(train.learning_rate, 2e-5);
        assert_eq!(train.epochs, 5);
    }

    #[test]
    fn unknown_preset_is_rejected() {
        let f = write_config(r#"{"data": {"train": "t"}, "train": {"preset": "giant"}}"#);
        assert!(AppConfig::load(f.path()).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let f = write_config(r#"{"data": {"train": "t"}, "loss": {"gamma": -1.0}}"#);
        assert!(AppConfig::load(f.path()).is_err());
        let f = write_config(r#"{"data": {"train": "t"}, "model": {"d_model": 30, "n_heads": 4}}"#);
        assert!(AppConfig::load(f.path()).is_err());
    }
}
