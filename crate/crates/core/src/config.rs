//! Flat `key = value` run configuration with file and flag layering.

use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{PreprocessConfig, DEFAULT_MAX_LEN};
use crate::model::ModelConfig;
use crate::numeric::DecayMode;
use crate::train::TrainConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("config key {key:?}: cannot parse {value:?} ({reason})")]
    Type { key: String, value: String, reason: String },
    #[error("config line {line}: expected \"key = value\", got {text:?}")]
    Syntax { line: usize, text: String },
}

/// Every option a run can be configured with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub max_len: usize,
    pub min_freq: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            max_len: DEFAULT_MAX_LEN,
            min_freq: 1,
        }
    }
}

/// Recognised keys, in manifest order.
pub const KEYS: &[&str] = &[
    "embed_dim",
    "hidden_dim",
    "num_heads",
    "num_lstm_layers",
    "window_size",
    "kernel_widths",
    "feature_maps_per_width",
    "dropout_p",
    "lambda1",
    "lambda2",
    "lambda3",
    "attention_mode",
    "channel_mask",
    "subtask_loss_enabled",
    "fusion",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "patience",
    "seed",
    "weight_decay",
    "decay_mode",
    "max_len",
    "min_freq",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse::<T>().map_err(|e| ConfigError::Type {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_decay(key: &str, value: &str) -> Result<DecayMode, ConfigError> {
    match value {
        "decoupled" => Ok(DecayMode::Decoupled),
        "l2" => Ok(DecayMode::L2),
        _ => Err(ConfigError::Type {
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected decoupled|l2".to_string(),
        }),
    }
}

fn decay_str(mode: DecayMode) -> &'static str {
    match mode {
        DecayMode::Decoupled => "decoupled",
        DecayMode::L2 => "l2",
    }
}

/// Accepts dashes for underscores and `lr` for `learning_rate`.
pub fn canonical_key(key: &str) -> String {
    let key = key.trim().trim_start_matches("--").replace('-', "_");
    match key.as_str() {
        "lr" => "learning_rate".to_string(),
        _ => key,
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = canonical_key(key);
        let k = key.as_str();
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        match k {
            "embed_dim" => m.embed_dim = parse(k, v)?,
            "hidden_dim" => m.hidden_dim = parse(k, v)?,
            "num_heads" => m.num_heads = parse(k, v)?,
            "num_lstm_layers" => m.num_lstm_layers = parse(k, v)?,
            "window_size" => m.window_size = parse(k, v)?,
            "kernel_widths" => m.kernel_widths = v.split(',').map(|w| parse(k, w.trim())).collect::<Result<_, _>>()?,
            "feature_maps_per_width" => m.feature_maps_per_width = parse(k, v)?,
            "dropout_p" => m.dropout_p = parse(k, v)?,
            "lambda1" => m.lambda1 = parse(k, v)?,
            "lambda2" => m.lambda2 = parse(k, v)?,
            "lambda3" => m.lambda3 = parse(k, v)?,
            "attention_mode" => m.attention_mode = parse(k, v)?,
            "channel_mask" => m.channel_mask = parse(k, v)?,
            "subtask_loss_enabled" => m.subtask_loss_enabled = parse(k, v)?,
            "fusion" => m.fusion = parse(k, v)?,
            "learning_rate" => t.learning_rate = parse(k, v)?,
            "batch_size" => t.batch_size = parse(k, v)?,
            "max_epochs" => t.max_epochs = parse(k, v)?,
            "patience" => t.patience = parse(k, v)?,
            "seed" => t.seed = parse(k, v)?,
            "weight_decay" => t.weight_decay = parse(k, v)?,
            "decay_mode" => t.decay_mode = parse_decay(k, v)?,
            "max_len" => self.max_len = parse(k, v)?,
            "min_freq" => self.min_freq = parse(k, v)?,
            _ => return Err(ConfigError::UnknownKey { key }),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let t = &self.train;
        Some(match canonical_key(key).as_str() {
            "embed_dim" => m.embed_dim.to_string(),
            "hidden_dim" => m.hidden_dim.to_string(),
            "num_heads" => m.num_heads.to_string(),
            "num_lstm_layers" => m.num_lstm_layers.to_string(),
            "window_size" => m.window_size.to_string(),
            "kernel_widths" => m
                .kernel_widths
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "feature_maps_per_width" => m.feature_maps_per_width.to_string(),
            "dropout_p" => m.dropout_p.to_string(),
            "lambda1" => m.lambda1.to_string(),
            "lambda2" => m.lambda2.to_string(),
            "lambda3" => m.lambda3.to_string(),
            "attention_mode" => m.attention_mode.as_str().to_string(),
            "channel_mask" => m.channel_mask.as_str().to_string(),
            "subtask_loss_enabled" => m.subtask_loss_enabled.to_string(),
            "fusion" => m.fusion.as_str().to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "patience" => t.patience.to_string(),
            "seed" => t.seed.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "decay_mode" => decay_str(t.decay_mode).to_string(),
            "max_len" => self.max_len.to_string(),
            "min_freq" => self.min_freq.to_string(),
            _ => return None,
        })
    }

    /// Every key with its current value, one `key = value` per line. Parsing
    /// this text back yields an identical config.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            window_size: self.model.window_size,
            max_len: self.max_len,
        }
    }
}

/// `(line, key, value)` entries of a flat config file. Blank lines and `#`
/// comments are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            });
        };
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Defaults, then the file, then the flag overrides.
pub fn config_merge(file: Option<&str>, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut config = RunConfig::default();
    if let Some(text) = file {
        for (_, k, v) in parse_config_text(text)? {
            config.set(&k, &v)?;
        }
    }
    for (k, v) in overrides {
        config.set(k, v)?;
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::AttentionMode;
    use crate::model::ChannelMask;

    #[test]
    fn defaults_without_file_or_flags() {
        let c = config_merge(None, &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.model.window_size, 4);
        assert_eq!(c.model.num_heads, 10);
        assert_eq!(c.model.dropout_p, 0.5);
        assert_eq!(c.train.batch_size, 32);
    }

    #[test]
    fn flags_override_file() {
        let file = "window_size = 3\nhidden_dim=16 # smaller\n\n# comment\nattention_mode = raw\n";
        let c = config_merge(Some(file), &[("window-size".into(), "4".into())]).unwrap();
        assert_eq!(c.model.window_size, 4);
        assert_eq!(c.model.hidden_dim, 16);
        assert_eq!(c.model.attention_mode, AttentionMode::Raw);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = config_merge(Some("windwo_size = 3"), &[]).unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                key: "windwo_size".into()
            }
        );
        assert!(err.to_string().contains("windwo_size"));
    }

    #[test]
    fn type_mismatch_and_syntax() {
        assert!(matches!(
            config_merge(None, &[("batch_size".into(), "many".into())]),
            Err(ConfigError::Type { .. })
        ));
        assert!(matches!(
            config_merge(Some("just words"), &[]),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("lr", "2e-4").unwrap();
        c.set("kernel_widths", "2, 3").unwrap();
        c.set("channel_mask", "sentence_only").unwrap();
        c.set("decay_mode", "l2").unwrap();
        let back = config_merge(Some(&c.to_text()), &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.model.channel_mask, ChannelMask::SentenceOnly);
        assert_eq!(c.to_text().lines().count(), KEYS.len());
    }
}
