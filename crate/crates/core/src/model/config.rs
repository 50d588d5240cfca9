use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::forge::signs::SIGN_COUNT;
use crate::forge::tokenizer::{BYTE_VOCAB_SIZE, MAX_TOKENS};

/// What the projector maps into the language model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectorMode {
    /// Every projected patch token.
    #[default]
    Patches,
    /// A single projected pooled token.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub encoder_layers: usize,
    pub text_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub sign_count: usize,
    pub ffn_hidden: usize,
    /// Sigmoid probability at which a sign's CLS token is inserted.
    pub sign_threshold: f64,
    pub projector: ProjectorMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            embed_dim: 64,
            encoder_layers: 2,
            text_layers: 1,
            decoder_layers: 2,
            heads: 4,
            vocab_size: BYTE_VOCAB_SIZE,
            max_tokens: MAX_TOKENS,
            sign_count: SIGN_COUNT,
            ffn_hidden: 128,
            sign_threshold: 0.5,
            projector: ProjectorMode::Patches,
        }
    }
}

impl ModelConfig {
    /// Gradient-check scale: embed 8, one layer per stack, vocab 64.
    pub fn tiny() -> Self {
        Self {
            image_size: 8,
            patch_size: 4,
            embed_dim: 8,
            encoder_layers: 1,
            text_layers: 1,
            decoder_layers: 1,
            heads: 2,
            vocab_size: 64,
            max_tokens: 32,
            ffn_hidden: 16,
            ..Self::default()
        }
    }

    pub fn num_patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Rows the visual prefix contributes before any sign tokens.
    pub fn visual_tokens(&self) -> usize {
        match self.projector {
            ProjectorMode::Patches => self.num_patches(),
            ProjectorMode::Pooled => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("vocab_size", self.vocab_size),
            ("max_tokens", self.max_tokens),
            ("ffn_hidden", self.ffn_hidden),
            ("text_layers", self.text_layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(contract(format!("model config: {name} must be positive")));
            }
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(contract(format!(
                "model config: image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(contract(format!(
                "model config: embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.sign_count != SIGN_COUNT {
            return Err(contract(format!("model config: sign_count must be {SIGN_COUNT}")));
        }
        if !(0.0..=1.0).contains(&self.sign_threshold) {
            return Err(contract("model config: sign_threshold outside [0, 1]"));
        }
        if self.visual_tokens() + 2 > self.max_tokens {
            return Err(contract("model config: max_tokens leaves no room for dialogue tokens"));
        }
        Ok(())
    }
}
