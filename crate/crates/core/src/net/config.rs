use serde::{Deserialize, Serialize};

use crate::chess::{vocabulary, INPUT_LEN, NUM_CHANNELS};
use crate::error::{Error, Result};

/// Network dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Residual blocks in the convolutional backbone.
    pub k_conv: usize,
    /// Skill-aware transformer blocks.
    pub k_att: usize,
    pub c_input: usize,
    pub c_mid: usize,
    /// Channels grouped into one token.
    pub c_patch: usize,
    /// Skill embedding width.
    pub d: usize,
    pub d_h: usize,
    pub heads: usize,
    pub d_att: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// Full-size dimensions.
    pub fn paper() -> Self {
        ModelConfig {
            k_conv: 12,
            k_att: 2,
            c_input: NUM_CHANNELS,
            c_mid: 256,
            c_patch: 8,
            d: 128,
            d_h: 64,
            heads: 16,
            d_att: 1024,
            d_ffn: 4096,
            vocab_size: vocabulary().len(),
        }
    }

    /// CPU-sized dimensions used by default.
    pub fn desk() -> Self {
        ModelConfig {
            k_conv: 4,
            c_mid: 64,
            d: 32,
            heads: 4,
            d_h: 64,
            d_att: 256,
            d_ffn: 1024,
            ..ModelConfig::paper()
        }
    }

    /// Very small network for tests and quick experiments.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            k_conv: 1,
            k_att: 2,
            c_input: NUM_CHANNELS,
            c_mid: 8,
            c_patch: 4,
            d: 8,
            d_h: 8,
            heads: 2,
            d_att: 16,
            d_ffn: 32,
            vocab_size,
        }
    }

    pub fn tokens(&self) -> usize {
        self.c_mid / self.c_patch
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("k_att", self.k_att),
            ("c_mid", self.c_mid),
            ("c_patch", self.c_patch),
            ("d", self.d),
            ("d_h", self.d_h),
            ("heads", self.heads),
            ("d_att", self.d_att),
            ("d_ffn", self.d_ffn),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be at least 1")));
        }
        if self.c_input * 64 != INPUT_LEN {
            return Err(Error::Config(format!("model.c_input must be {NUM_CHANNELS}")));
        }
        if self.c_mid % self.c_patch != 0 {
            return Err(Error::Config(format!(
                "model.c_mid ({}) must be divisible by model.c_patch ({})",
                self.c_mid, self.c_patch
            )));
        }
        if self.d_att != self.heads * self.d_h {
            return Err(Error::Config(format!(
                "model.d_att ({}) must equal heads * d_h ({} * {})",
                self.d_att, self.heads, self.d_h
            )));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}
