use serde::{Deserialize, Serialize};

use crate::data::VOCAB_SIZE;
use crate::error::{Error, Result};

/// Architecture hyperparameters. [`Default`] is the full-size 24-layer
/// configuration; [`ModelConfig::toy`] builds small desk-scale variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_q_heads: usize,
    pub n_kv_heads: usize,
    pub d_head_nope: usize,
    pub d_head_rope: usize,
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub vocab_padded: usize,
    pub max_seq_len: usize,
    pub canon_kernel: usize,
    pub rope_base: f64,
    /// Shift the NoPE slice of keys forward one position.
    pub key_offset: bool,
    pub canon_a: bool,
    pub canon_c: bool,
    pub canon_d: bool,
    /// Mix layer-0 values into every later layer.
    pub value_residual: bool,
    /// Standard deviation of the truncated-normal projection init.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 24,
            d_model: 1024,
            n_q_heads: 16,
            n_kv_heads: 2,
            d_head_nope: 96,
            d_head_rope: 32,
            ffn_mult: 4,
            vocab_size: VOCAB_SIZE,
            vocab_padded: 32,
            max_seq_len: 16384,
            canon_kernel: 4,
            rope_base: 10_000.0,
            key_offset: true,
            canon_a: true,
            canon_c: true,
            canon_d: true,
            value_residual: true,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// The full 309M-parameter model; also the default.
    pub fn full() -> Self {
        Self::default()
    }

    /// Small config: 4 query heads over 2 KV heads, head width `d_model / 4`
    /// split 3:1 between NoPE and RoPE like the full model.
    pub fn toy(n_layers: usize, d_model: usize) -> Self {
        let d_head = (d_model / 4).max(4);
        let rope = (d_head / 4).max(2) & !1;
        ModelConfig {
            n_layers,
            d_model,
            n_q_heads: 4,
            n_kv_heads: 2,
            d_head_nope: d_head - rope,
            d_head_rope: rope,
            max_seq_len: 1024,
            ..Self::default()
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_head_nope + self.d_head_rope
    }

    pub fn q_width(&self) -> usize {
        self.n_q_heads * self.d_head()
    }

    pub fn kv_width(&self) -> usize {
        self.n_kv_heads * self.d_head()
    }

    pub fn d_ffn(&self) -> usize {
        self.ffn_mult * self.d_model
    }

    /// Residual branch scale `1 / sqrt(n_layers)`.
    pub fn branch_scale(&self) -> f64 {
        1.0 / (self.n_layers as f64).sqrt()
    }

    pub fn attn_scale(&self) -> f64 {
        1.0 / (self.d_head() as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.d_model == 0 || self.ffn_mult == 0 {
            return bad("n_layers, d_model and ffn_mult must be positive".into());
        }
        if self.n_kv_heads == 0 || !self.n_q_heads.is_multiple_of(self.n_kv_heads) {
            return bad(format!(
                "{} query heads not divisible by {} kv heads",
                self.n_q_heads, self.n_kv_heads
            ));
        }
        if !self.d_head_rope.is_multiple_of(2) {
            return bad(format!("d_head_rope {} is odd", self.d_head_rope));
        }
        if self.d_head() == 0 {
            return bad("empty attention head".into());
        }
        if self.vocab_size != VOCAB_SIZE || self.vocab_padded < self.vocab_size {
            return bad(format!(
                "vocab {} padded to {}; the tokenizer has {VOCAB_SIZE} symbols",
                self.vocab_size, self.vocab_padded
            ));
        }
        if self.canon_kernel == 0 {
            return bad("canon_kernel must be at least 1".into());
        }
        // written so NaN fails too
        if !(self.rope_base > 1.0) {
            return bad(format!("rope_base {} must exceed 1", self.rope_base));
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive".into());
        }
        Ok(())
    }

    /// Parameter count from the architecture alone.
    pub fn count_params(&self) -> usize {
        let d = self.d_model;
        let k = self.canon_kernel;
        let mut per_layer = d * self.q_width()
            + d * self.kv_width()
            + self.q_width() * d
            + d * self.d_ffn()
            + self.d_ffn() * d
            + 4 * d;
        if self.canon_a {
            per_layer += k * d;
        }
        if self.canon_c {
            per_layer += k * d;
        }
        if self.canon_d {
            per_layer += k * self.d_ffn();
        }
        let lambdas = if self.value_residual {
            2 * (self.n_layers - 1)
        } else {
            0
        };
        self.vocab_padded * d + d + self.n_layers * per_layer + lambdas + d + d * self.vocab_padded
    }
}

pub fn count_params(config: &ModelConfig) -> usize {
    config.count_params()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_counts_about_309m() {
        let c = ModelConfig::full();
        c.validate().unwrap();
        let n = c.count_params() as f64;
        assert!((n / 309e6 - 1.0).abs() < 0.05, "{n}");
        assert_eq!(c.d_head(), 128);
        assert!((c.branch_scale() - 0.20412).abs() < 1e-5);
    }

    #[test]
    fn vocab_terms_are_linear() {
        let a = ModelConfig::toy(2, 64);
        let mut b = a.clone();
        b.vocab_padded *= 2;
        assert_eq!(
            b.count_params() - a.count_params(),
            2 * a.d_model * a.vocab_padded
        );
    }

    #[test]
    fn toy_hand_count() {
        let c = ModelConfig::toy(2, 64);
        assert_eq!((c.d_head_nope, c.d_head_rope), (12, 4));
        // q 64x64, kv 64x32, o 64x64, up 64x256, down 256x64
        let mats = 4096 + 2048 + 4096 + 16384 + 16384;
        // canon a, c (4x64 each), d (4x256), four norm gains
        let small = 256 + 256 + 1024 + 4 * 64;
        let per_layer = mats + small;
        // embed 32x64 + norm, head 64x32 + final norm, one pair of lambdas
        let want = 2048 + 64 + 2 * per_layer + 2 + 64 + 2048;
        assert_eq!(c.count_params(), want);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut c = ModelConfig::toy(1, 64);
        c.n_q_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(1, 64);
        c.d_head_rope = 3;
        assert!(c.validate().is_err());
    }
}
