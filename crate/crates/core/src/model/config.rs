use serde::{Deserialize, Serialize};

use crate::error::{MdmdError, Result};

/// Network dimensions. The group count is not here: it comes from the
/// [`SchemaSet`](crate::schema::SchemaSet) the model is built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub decoder_blocks: usize,
    /// Defaults to `encoder_heads`.
    pub decoder_heads: Option<usize>,
    pub ffn_ratio: usize,
    /// Hidden width of every prediction head is `embed_dim / head_hidden_divisor`.
    pub head_hidden_divisor: usize,
    /// Adds the conventional residual around the decoder FFN. Off by default:
    /// the decoder block output is `FFN(LN(F²))` with no skip connection.
    pub decoder_ffn_residual: bool,
    /// Standard deviation of the truncated-normal weight initialization.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 224,
            patch_size: 16,
            embed_dim: 768,
            encoder_layers: 12,
            encoder_heads: 12,
            decoder_blocks: 3,
            decoder_heads: None,
            ffn_ratio: 4,
            head_hidden_divisor: 4,
            decoder_ffn_residual: false,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by tests and examples.
    pub fn toy(image_size: usize, patch_size: usize, embed_dim: usize, encoder_layers: usize, decoder_blocks: usize) -> Self {
        let heads = if embed_dim >= 64 { 4 } else { 2 };
        ModelConfig {
            image_size,
            patch_size,
            embed_dim,
            encoder_layers,
            encoder_heads: heads,
            decoder_blocks,
            decoder_heads: None,
            ..ModelConfig::default()
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patch_count(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Patch tokens plus the global token.
    pub fn token_count(&self) -> usize {
        self.patch_count() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn decoder_heads(&self) -> usize {
        self.decoder_heads.unwrap_or(self.encoder_heads)
    }

    pub fn head_hidden(&self) -> usize {
        self.embed_dim / self.head_hidden_divisor
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MdmdError::Config(m));
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.embed_dim == 0 || self.encoder_heads == 0 || !self.embed_dim.is_multiple_of(self.encoder_heads) {
            return bad(format!(
                "embed_dim {} must be divisible by encoder_heads {}",
                self.embed_dim, self.encoder_heads
            ));
        }
        let dh = self.decoder_heads();
        if dh == 0 || !self.embed_dim.is_multiple_of(dh) {
            return bad(format!("embed_dim {} must be divisible by decoder_heads {dh}", self.embed_dim));
        }
        if self.ffn_ratio == 0 {
            return bad("ffn_ratio must be positive".into());
        }
        if self.head_hidden_divisor == 0 || self.head_hidden() == 0 {
            return bad(format!(
                "head hidden width embed_dim / {} must be positive",
                self.head_hidden_divisor
            ));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return bad("init_std must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_give_197_tokens() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.grid(), 14);
        assert_eq!(c.token_count(), 197);
        assert_eq!(c.head_hidden(), 192);
    }

    #[test]
    fn toy_token_count() {
        let c = ModelConfig::toy(32, 8, 32, 1, 1);
        assert_eq!(c.token_count(), 17);
    }

    #[test]
    fn rejects_indivisible_dimensions() {
        let mut c = ModelConfig::toy(32, 8, 32, 1, 1);
        c.image_size = 30;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(32, 8, 32, 1, 1);
        c.encoder_heads = 3;
        assert!(c.validate().is_err());
    }
}
