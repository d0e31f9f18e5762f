use serde::{Deserialize, Serialize};

use crate::error::{DapError, Result};

/// Special token ids shared by every vocabulary.
pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
pub const N_SPECIALS: usize = 3;

/// Hyperparameters of the dual encoder, RTL head, and TLM head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Encoder transformer layers.
    pub layers: usize,
    /// Hidden size; must be divisible by `n_heads`.
    pub d: usize,
    pub n_heads: usize,
    /// Feed-forward inner size.
    pub d_ff: usize,
    /// Vocabulary size including specials.
    pub vocab: usize,
    /// Maximum sequence length including the CLS slot.
    pub s_max: usize,
    /// RTL head transformer layers.
    pub rtl_layers: usize,
    /// Number of languages for the optional language embeddings.
    pub n_langs: usize,
    /// Alias the vocabulary head to the token embedding table.
    pub tie_vocab_head: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            d: 64,
            n_heads: 4,
            d_ff: 128,
            vocab: 603,
            s_max: 32,
            rtl_layers: 2,
            n_langs: 3,
            tie_vocab_head: true,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("layers", self.layers),
            ("d", self.d),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab", self.vocab),
            ("s_max", self.s_max),
            ("rtl_layers", self.rtl_layers),
            ("n_langs", self.n_langs),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(DapError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.d % self.n_heads != 0 {
            return Err(DapError::Config(format!(
                "d ({}) must be divisible by n_heads ({})",
                self.d, self.n_heads
            )));
        }
        if self.vocab <= N_SPECIALS {
            return Err(DapError::Config(format!(
                "vocab ({}) must exceed the {} specials",
                self.vocab, N_SPECIALS
            )));
        }
        if self.rtl_layers > self.layers {
            eprintln!(
                "warning: rtl_layers ({}) > layers ({}); K <= L is recommended",
                self.rtl_layers, self.layers
            );
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }
}
