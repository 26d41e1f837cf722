//! Experiment configuration: a TOML file covering every tunable, with
//! defaults matching the reference training setup.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::lattice::{Pooling, SpanLengthSemantics};
use crate::separation::SeparationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeConfig {
    pub max_span_length: usize,
    pub pooling: Pooling,
    pub span_length_semantics: SpanLengthSemantics,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig {
            max_span_length: 8,
            pooling: Pooling::Max,
            span_length_semantics: SpanLengthSemantics::TokenLength,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Disable to keep conflicting triplets (the union of both directions).
    pub resolve_conflicts: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            resolve_conflicts: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Fine-tuning rate for encoder parameters.
    pub encoder_lr: f64,
    /// Learning rate for everything else.
    pub head_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Optional early stop once dev F1 reaches this value.
    pub stop_at_dev_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder_lr: 1e-5,
            head_lr: 1e-4,
            batch_size: 16,
            epochs: 120,
            weight_decay: 0.01,
            stop_at_dev_f1: None,
        }
    }
}

/// Everything a run needs; model selection is always dev triplet F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Pins single-threaded execution; all current code paths honor it.
    pub deterministic: bool,
    pub encoder: EncoderConfig,
    pub lattice: LatticeConfig,
    pub loss: SeparationConfig,
    pub decoder: DecoderConfig,
    pub inference: InferenceConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.lattice.max_span_length == 0 {
            return Err(Error::Config("lattice.max_span_length must be positive".into()));
        }
        if self.loss.epsilon <= 0.0 {
            return Err(Error::Config("loss.epsilon must be positive".into()));
        }
        if self.train.encoder_lr <= 0.0 || self.train.head_lr <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.train.weight_decay < 0.0 {
            return Err(Error::Config("train.weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    /// Content hash of the resolved configuration.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        sha256_hex(canonical.as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Content hash of a file, for run manifests.
pub fn file_fingerprint(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::separation::SeparationVariant;

    #[test]
    fn defaults_match_the_reference_setup() {
        let config = ExperimentConfig::default();
        assert_eq!(config.train.encoder_lr, 1e-5);
        assert_eq!(config.train.head_lr, 1e-4);
        assert_eq!(config.train.batch_size, 16);
        assert_eq!(config.train.epochs, 120);
        assert_eq!(config.encoder.dropout, 0.1);
        assert_eq!(config.decoder.dropout, 0.1);
        assert_eq!(config.lattice.max_span_length, 8);
        assert_eq!(config.loss.variant, SeparationVariant::Kl);
        assert!(config.validate().is_ok());
    }

    #[test]
    fn toml_round_trip_preserves_the_config() {
        let mut config = ExperimentConfig::default();
        config.seed = 7;
        config.loss.variant = SeparationVariant::Js;
        config.decoder.enable_o_to_a = false;
        config.train.stop_at_dev_f1 = Some(1.0);
        let text = config.to_toml();
        let restored = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(config, restored);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let config = ExperimentConfig::from_toml_str(
            "seed = 3\n[loss]\nvariant = \"euclidean\"\n[train]\nepochs = 5\n",
        )
        .unwrap();
        assert_eq!(config.seed, 3);
        assert_eq!(config.loss.variant, SeparationVariant::Euclidean);
        assert_eq!(config.train.epochs, 5);
        assert_eq!(config.train.batch_size, 16);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "[train]\nbatch_size = 0\n",
            "[train]\nepochs = 0\n",
            "[train]\nencoder_lr = 0.0\n",
            "[loss]\nepsilon = 0.0\n",
            "[lattice]\nmax_span_length = 0\n",
            "[encoder]\ndropout = 1.0\n",
            "[decoder]\nenable_a_to_o = false\nenable_o_to_a = false\n",
        ] {
            assert!(
                ExperimentConfig::from_toml_str(text).is_err(),
                "accepted: {text}"
            );
        }
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 99;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
