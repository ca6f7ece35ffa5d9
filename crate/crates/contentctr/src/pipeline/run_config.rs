//! One JSON document configures a whole run: data generation, model shape,
//! loss weights, and optimizer schedule. Cross-field consistency (window
//! length, feature widths) is validated here so commands fail before any
//! work starts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GeneratorConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    Cosine,
}

impl Schedule {
    /// Per-epoch learning rate; `epoch` is 0-based. Cosine anneals from the
    /// base rate toward (but never reaching) zero across the run.
    pub fn learning_rate(&self, base: f64, epoch: usize, total_epochs: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let frac = epoch as f64 / total_epochs.max(1) as f64;
                base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 5e-5,
            epochs: 12,
            batch_size: 48,
            schedule: Schedule::Constant,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "optimizer.learning_rate: must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("optimizer.epochs: must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(
                "optimizer.batch_size: must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        let pairs = [
            ("n", self.model.n, self.generator.n),
            ("d_visual", self.model.d_visual, self.generator.d_visual),
            ("d_text", self.model.d_text, self.generator.d_text),
        ];
        for (name, m, g) in pairs {
            if m != g {
                return Err(Error::Config(format!(
                    "model.{name} = {m} disagrees with generator.{name} = {g}"
                )));
            }
        }
        if self.model.streamers < self.generator.streamers {
            return Err(Error::Config(format!(
                "model.streamers = {} cannot embed generator.streamers = {}",
                self.model.streamers, self.generator.streamers
            )));
        }
        Ok(())
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("bad run config: {e}")))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::MaskMode;

    pub(crate) fn desk_run_config() -> RunConfig {
        RunConfig {
            generator: GeneratorConfig {
                streamers: 4,
                windows_per_streamer: 10,
                n: 8,
                d_visual: 12,
                d_text: 10,
                ..GeneratorConfig::default()
            },
            model: ModelConfig {
                n: 8,
                d: 16,
                n_heads: 2,
                d_head: 8,
                perceiver_layers: 1,
                decoder_layers: 1,
                ffn_hidden: 32,
                d_visual: 12,
                d_text: 10,
                streamers: 4,
                mask: MaskMode::Causal,
                positional: true,
                pre_norm: false,
            },
            loss: LossConfig::default(),
            optimizer: OptimizerConfig {
                learning_rate: 1e-3,
                epochs: 2,
                batch_size: 8,
                schedule: Schedule::Constant,
            },
            seed: 7,
        }
    }

    #[test]
    fn cross_field_mismatches_are_named() {
        let mut config = desk_run_config();
        config.model.n = 10;
        let msg = config.validate().err().unwrap().to_string();
        assert!(msg.contains("model.n"), "{msg}");

        let mut config = desk_run_config();
        config.model.streamers = 2;
        let msg = config.validate().err().unwrap().to_string();
        assert!(msg.contains("streamers"), "{msg}");
    }

    #[test]
    fn schedule_values() {
        let lr = 1.0;
        assert_eq!(Schedule::Constant.learning_rate(lr, 5, 10), 1.0);
        assert_eq!(Schedule::Cosine.learning_rate(lr, 0, 10), 1.0);
        let mid = Schedule::Cosine.learning_rate(lr, 5, 10);
        assert!((mid - 0.5).abs() < 1e-12);
        let late = Schedule::Cosine.learning_rate(lr, 9, 10);
        assert!(late > 0.0 && late < 0.05);
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let config = desk_run_config();
        let json = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(back.seed, 7);

        let err = serde_json::from_str::<RunConfig>(&json.replace("\"seed\"", "\"sneed\""));
        assert!(err.is_err());
    }
}
