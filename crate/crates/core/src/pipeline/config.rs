//! Flat TOML experiment configuration.
//!
//! A file may start from a preset (`preset = "desk"` or `"full-scale"`) and
//! override any key. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::ModelDims;
use crate::error::{Error, Result};
use crate::matching::MatchConfig;
use crate::mining::{MiningConfig, MiningStrategy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,

    pub embed_dim: usize,
    /// Points per generated cloud.
    pub points: usize,
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub start_octave: i32,
    pub num_octaves: usize,
    pub conv_channels: usize,
    pub patch: usize,
    pub depth: usize,
    pub heads: usize,
    pub word_dim: usize,
    pub hidden_dim: usize,
    pub max_len: usize,

    pub lambda: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tolerance: f64,

    pub margin: f64,
    pub mining: MiningStrategy,

    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Test-split RR@1 is logged every this many epochs; 0 disables it.
    pub val_every: usize,
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        ExperimentConfig {
            preset: "desk".into(),
            seed: 0,
            embed_dim: 64,
            points: 1024,
            views: 8,
            height: 32,
            width: 32,
            start_octave: 0,
            num_octaves: 2,
            conv_channels: 16,
            patch: 4,
            depth: 2,
            heads: 4,
            word_dim: 32,
            hidden_dim: 64,
            max_len: 24,
            lambda: 1.0,
            alpha: 0.5,
            epsilon: 0.05,
            sinkhorn_iters: 200,
            sinkhorn_tolerance: 1e-6,
            margin: 0.2,
            mining: MiningStrategy::SemiHard,
            batch_size: 32,
            epochs: 50,
            learning_rate: 1e-3,
            val_every: 10,
        }
    }

    pub fn full_scale() -> Self {
        ExperimentConfig {
            preset: "full-scale".into(),
            embed_dim: 1024,
            points: 2500,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full-scale" => Ok(Self::full_scale()),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let preset = match user.get("preset") {
            None => "desk",
            Some(toml::Value::String(s)) => s.as_str(),
            Some(_) => return Err(Error::Config("`preset` must be a string".into())),
        };
        let mut merged = toml::Table::try_from(Self::preset(preset)?).expect("config serialises");
        for (k, v) in user {
            merged.insert(k, v);
        }
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// First eight bytes of the SHA-256 of the canonical TOML text.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
    }

    pub fn model_dims(&self, vocab_size: usize) -> ModelDims {
        ModelDims {
            embed_dim: self.embed_dim,
            vocab_size,
            word_dim: self.word_dim,
            hidden_dim: self.hidden_dim,
            max_len: self.max_len,
            views: self.views,
            height: self.height,
            width: self.width,
            start_octave: self.start_octave,
            num_octaves: self.num_octaves,
            conv_channels: self.conv_channels,
            patch: self.patch,
            depth: self.depth,
            heads: self.heads,
        }
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            lambda: self.lambda,
            alpha: self.alpha,
            epsilon: self.epsilon,
            max_iters: self.sinkhorn_iters,
            tolerance: self.sinkhorn_tolerance,
        }
    }

    pub fn mining_config(&self) -> MiningConfig {
        MiningConfig {
            margin: self.margin,
            strategy: self.mining,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Self::preset(&self.preset)?;
        // Vocabulary size is only known after reading captions; any valid size works here.
        self.model_dims(2).validate()?;
        self.match_config().validate()?;
        self.mining_config().validate()?;
        if self.points == 0 {
            return Err(Error::Config("points must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("invalid learning_rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["desk", "full-scale"] {
            let c = ExperimentConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(c.model_dims(100).tokens_per_view(), 4);
        }
        assert_eq!(ExperimentConfig::full_scale().embed_dim, 1024);
        assert_eq!(ExperimentConfig::full_scale().points, 2500);
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut c = ExperimentConfig::desk();
        c.learning_rate = 0.0123456789;
        c.mining = MiningStrategy::Hardest;
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn overrides_and_rejections() {
        let c = ExperimentConfig::from_toml("preset = \"full-scale\"\nepochs = 3\n").unwrap();
        assert_eq!((c.embed_dim, c.epochs), (1024, 3));
        assert!(matches!(ExperimentConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml("patch = 3").is_err());
        assert!(ExperimentConfig::from_toml("mining = \"easy\"").is_err());
        assert!(ExperimentConfig::from_toml("preset = \"huge\"").is_err());
        assert_ne!(ExperimentConfig::desk().hash(), ExperimentConfig::full_scale().hash());
    }
}
