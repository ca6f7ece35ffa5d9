//! Model hyperparameters and the attention mask builder.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// How the sequence decoder is allowed to look across timestamps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Each timestamp attends to itself and earlier ones only.
    Causal,
    /// Every timestamp sees the whole window (the hindsight variant).
    Full,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Segments per window.
    pub n: usize,
    /// Width of the fused representation.
    pub d: usize,
    pub n_heads: usize,
    pub d_head: usize,
    /// Depth of the latent-query fusion block.
    pub perceiver_layers: usize,
    /// Depth of the sequence decoder.
    pub decoder_layers: usize,
    pub ffn_hidden: usize,
    /// Incoming visual embedding width.
    pub d_visual: usize,
    /// Incoming text embedding width.
    pub d_text: usize,
    /// Size of the streamer embedding table.
    pub streamers: usize,
    pub mask: MaskMode,
    /// Add a learned positional embedding before the decoder.
    pub positional: bool,
    /// Layer-normalize block inputs (pre-norm residuals). Off by default:
    /// plain residual blocks.
    #[serde(default)]
    pub pre_norm: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.n", self.n),
            ("model.d", self.d),
            ("model.n_heads", self.n_heads),
            ("model.d_head", self.d_head),
            ("model.perceiver_layers", self.perceiver_layers),
            ("model.decoder_layers", self.decoder_layers),
            ("model.ffn_hidden", self.ffn_hidden),
            ("model.d_visual", self.d_visual),
            ("model.d_text", self.d_text),
            ("model.streamers", self.streamers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n < 2 {
            return Err(Error::Config(format!(
                "model.n must be at least 2, got {}",
                self.n
            )));
        }
        Ok(())
    }
}

/// Additive attention mask (n, n): row i holds the offsets for timestamp i's
/// attention over timestamps j. Causal rows carry 0 at j <= i and -inf at
/// j > i; full mode is all zeros.
pub fn attention_mask(mode: MaskMode, n: usize) -> Tensor {
    let mut vals = vec![0.0; n * n];
    if mode == MaskMode::Causal {
        for i in 0..n {
            for j in i + 1..n {
                vals[i * n + j] = f64::NEG_INFINITY;
            }
        }
    }
    Tensor::new(vals, &[n, n]).expect("square mask")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelConfig {
        ModelConfig {
            n: 8,
            d: 16,
            n_heads: 2,
            d_head: 8,
            perceiver_layers: 1,
            decoder_layers: 1,
            ffn_hidden: 32,
            d_visual: 12,
            d_text: 10,
            streamers: 20,
            mask: MaskMode::Causal,
            positional: true,
            pre_norm: false,
        }
    }

    #[test]
    fn causal_mask_zeroes_lower_triangle_and_blocks_upper() {
        let m = attention_mask(MaskMode::Causal, 3);
        let d = m.data();
        for i in 0..3 {
            for j in 0..3 {
                let v = d[i * 3 + j];
                if j <= i {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v, f64::NEG_INFINITY);
                }
            }
        }
    }

    #[test]
    fn full_mask_is_all_zeros() {
        let m = attention_mask(MaskMode::Full, 4);
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn validation_names_offending_fields() {
        let mut c = base();
        c.d_head = 0;
        assert!(c.validate().unwrap_err().to_string().contains("model.d_head"));
        let mut c = base();
        c.n = 1;
        assert!(c.validate().unwrap_err().to_string().contains("model.n"));
        assert!(base().validate().is_ok());
    }

    #[test]
    fn config_json_round_trip() {
        let c = base();
        let json = serde_json::to_string_pretty(&c).unwrap();
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.n, c.n);
        assert_eq!(back.mask, c.mask);
        // unknown fields are a config error, not silently ignored
        let with_extra = json.replace("\"n\": 8,", "\"n\": 8, \"bogus\": 1,");
        assert!(serde_json::from_str::<ModelConfig>(&with_extra).is_err());
    }
}
