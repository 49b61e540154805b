use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionShape};
use crate::error::{Error, Result};

/// Architecture sizes and regularization of an encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub intermediate: usize,
    pub heads: usize,
    pub head_size: usize,
    pub embedding_size: usize,
    /// Filled from the corpus vocabulary when training.
    #[serde(default)]
    pub vocab_size: usize,
    pub max_len: usize,
    /// Half-width `k` of the score convolutions.
    pub kernel_half_width: usize,
    #[serde(default)]
    pub use_absolute_positions: bool,
    #[serde(default)]
    pub hidden_dropout: f64,
    #[serde(default)]
    pub attention_dropout: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub attention: AttentionConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EncoderConfig {
    /// Minutes-scale CPU configuration.
    pub fn desk() -> Self {
        Self {
            layers: 2,
            hidden: 64,
            intermediate: 128,
            heads: 2,
            head_size: 32,
            embedding_size: 64,
            vocab_size: 0,
            max_len: 32,
            kernel_half_width: 8,
            use_absolute_positions: false,
            hidden_dropout: 0.1,
            attention_dropout: 0.1,
            seed: 0,
            attention: AttentionConfig::default(),
        }
    }

    /// BERT-small pre-training sizes.
    pub fn bert_small() -> Self {
        Self {
            layers: 12,
            hidden: 256,
            intermediate: 1024,
            heads: 4,
            head_size: 64,
            embedding_size: 128,
            vocab_size: 30004,
            max_len: 128,
            kernel_half_width: 8,
            use_absolute_positions: false,
            hidden_dropout: 0.1,
            attention_dropout: 0.1,
            seed: 0,
            attention: AttentionConfig::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "bert-small" => Ok(Self::bert_small()),
            other => Err(Error::Config(format!(
                "unknown model preset `{other}` (expected desk or bert-small)"
            ))),
        }
    }

    pub fn attention_shape(&self) -> AttentionShape {
        AttentionShape {
            hidden: self.hidden,
            heads: self.heads,
            kernel_half_width: self.kernel_half_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden != self.heads * self.head_size || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} must equal heads {} × head size {}",
                self.hidden, self.heads, self.head_size
            )));
        }
        for (name, v) in [
            ("intermediate", self.intermediate),
            ("embedding_size", self.embedding_size),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size <= crate::train::vocab::NUM_SPECIALS {
            return Err(Error::Config(format!(
                "vocab size {} leaves no room beyond the special tokens",
                self.vocab_size
            )));
        }
        for (name, p) in [
            ("hidden_dropout", self.hidden_dropout),
            ("attention_dropout", self.attention_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} must be in [0, 1)")));
            }
        }
        Ok(())
    }
}
