use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};

/// Shape of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub max_len: usize,
    /// Hidden size of the feed-forward sublayer as a multiple of `width`.
    #[serde(default = "default_ff_mult")]
    pub ff_mult: usize,
}

fn default_ff_mult() -> usize {
    4
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { layers: 2, heads: 4, width: 64, max_len: 128, ff_mult: 4 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NeuralError::InvalidArgument(m));
        if self.layers == 0 || self.heads == 0 || self.width == 0 || self.ff_mult == 0 {
            return bad(format!("model dimensions must be positive: {self:?}"));
        }
        if self.width % self.heads != 0 {
            return bad(format!("width {} is not divisible by heads {}", self.width, self.heads));
        }
        if self.max_len < 2 {
            return bad(format!("max_len must be at least 2, got {}", self.max_len));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn ff_width(&self) -> usize {
        self.width * self.ff_mult
    }
}
