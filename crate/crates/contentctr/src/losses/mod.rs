//! Training objectives: pointwise log loss on per-segment CTR, pairwise
//! ranking losses over label-ordered segment pairs, and a contrastive
//! alignment loss built on soft-DTW-style path accumulation between the two
//! modality projections.

mod align;
mod dtw;
mod pointwise;
mod ranking;

pub use align::{align_infonce, shuffled_negatives, AlignOutput};
pub use dtw::{
    cosine_similarity_matrix, dtw_align, DtwMode, DtwOutput, DtwResult, Step, TieRule,
};
pub use pointwise::logloss;
pub use ranking::{admitted_pairs, pairwise_batch_loss, PairStats, PairVariant};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// Weights and knobs for the combined objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the pointwise log loss.
    pub lambda_point: f64,
    /// Weight of the alignment loss.
    pub lambda_align: f64,
    /// Weight of the pairwise ranking loss.
    pub lambda_pair: f64,
    /// Steepness of the pairwise logistic.
    pub sigma: f64,
    /// Softmax temperature of the alignment contrast.
    pub temperature: f64,
    /// Shuffled negatives per window for the alignment contrast.
    pub negatives: usize,
    pub pair_variant: PairVariant,
    #[serde(default)]
    pub dtw_mode: DtwMode,
    #[serde(default)]
    pub tie_rule: TieRule,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_point: 0.65,
            lambda_align: 0.15,
            lambda_pair: 0.20,
            sigma: 10.0,
            temperature: 1.0,
            negatives: 8,
            pair_variant: PairVariant::UnderMargin,
            dtw_mode: DtwMode::default(),
            tie_rule: TieRule::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("loss.lambda_point", self.lambda_point),
            ("loss.lambda_align", self.lambda_align),
            ("loss.lambda_pair", self.lambda_pair),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::Config(format!(
                "loss.sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "loss.temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.lambda_align > 0.0 && self.negatives == 0 {
            return Err(Error::Config(
                "loss.negatives must be at least 1 when lambda_align > 0".into(),
            ));
        }
        self.tie_rule.validate()?;
        Ok(())
    }
}

/// lambda_point * point + lambda_align * align + lambda_pair * pair. All
/// three inputs must be scalars on `tape`.
pub fn combined_loss(
    tape: &Tape,
    point: &Tensor,
    align: &Tensor,
    pair: &Tensor,
    config: &LossConfig,
) -> Result<Tensor> {
    for (name, t) in [("point", point), ("align", align), ("pair", pair)] {
        if t.numel() != 1 {
            return Err(Error::BadShape {
                op: "combined_loss",
                msg: format!("{name} component must be a scalar"),
                shape: t.shape().to_vec(),
            });
        }
    }
    let weighted_point = tape.scale(point, config.lambda_point)?;
    let weighted_align = tape.scale(align, config.lambda_align)?;
    let weighted_pair = tape.scale(pair, config.lambda_pair)?;
    let partial = tape.add(&weighted_point, &weighted_align)?;
    tape.add(&partial, &weighted_pair)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined_is_the_weighted_sum() {
        let tape = Tape::new();
        let point = tape.leaf(vec![2.0], &[]).unwrap();
        let align = tape.leaf(vec![3.0], &[]).unwrap();
        let pair = tape.leaf(vec![5.0], &[]).unwrap();
        let config = LossConfig::default();
        let total = combined_loss(&tape, &point, &align, &pair, &config).unwrap();
        let expect = 0.65 * 2.0 + 0.15 * 3.0 + 0.20 * 5.0;
        assert!((total.item().unwrap() - expect).abs() < 1e-12);

        let grads = tape.backward(&total).unwrap();
        assert_eq!(grads.wrt(&point).unwrap(), &[0.65]);
        assert_eq!(grads.wrt(&align).unwrap(), &[0.15]);
        assert_eq!(grads.wrt(&pair).unwrap(), &[0.20]);
    }

    #[test]
    fn config_validation_names_the_field() {
        let mut config = LossConfig::default();
        config.sigma = -1.0;
        let msg = config.validate().unwrap_err().to_string();
        assert!(msg.contains("loss.sigma"), "{msg}");

        let mut config = LossConfig::default();
        config.lambda_align = 0.1;
        config.negatives = 0;
        let msg = config.validate().unwrap_err().to_string();
        assert!(msg.contains("negatives"), "{msg}");
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = LossConfig::default();
        let json = serde_json::to_string(&config).unwrap();
        let back: LossConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.lambda_point, config.lambda_point);
        assert_eq!(back.pair_variant, config.pair_variant);
        assert_eq!(back.dtw_mode, config.dtw_mode);
    }
}
