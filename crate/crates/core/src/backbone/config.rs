use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Precision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Context window in tokens; also the number of learned positions.
    pub context: usize,
    /// Vocabulary size; normally taken from the tokenizer output.
    pub vocab: usize,
    pub dropout: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            d_model: 64,
            heads: 4,
            ffn: 256,
            context: 256,
            vocab: 0,
            dropout: 0.0,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.ffn == 0 || self.context == 0 {
            return Err(Error::invalid(
                "layers, d_model, ffn and context must be positive",
            ));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::invalid(format!(
                "{} heads do not divide d_model {}",
                self.heads, self.d_model
            )));
        }
        if self.vocab < 2 {
            return Err(Error::invalid(format!(
                "vocab size {} too small",
                self.vocab
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Errors unless `window_items` serialized items plus a suffix of
    /// `suffix_len` tokens fit in the context window.
    pub fn check_fits(&self, window_items: usize, suffix_len: usize) -> Result<()> {
        let required = crate::serialization::BLOCK_LEN * window_items + suffix_len;
        if required > self.context {
            return Err(Error::ContextOverflow {
                required,
                available: self.context,
            });
        }
        Ok(())
    }
}
