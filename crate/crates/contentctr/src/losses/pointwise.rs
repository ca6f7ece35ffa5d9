//! Pointwise log loss between predicted CTR and soft labels.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// Mean negative log likelihood of soft labels `y` under predictions `s`.
///
/// Predictions are clamped to [1e-7, 1 - 1e-7] before the logs so exact 0 or
/// 1 stays finite. Labels outside [0, 1] are rejected. `s` may be any shape;
/// the mean runs over all elements.
pub fn logloss(tape: &Tape, s: &Tensor, y: &[f64]) -> Result<Tensor> {
    if y.len() != s.numel() {
        return Err(Error::ShapeMismatch {
            op: "logloss",
            left: s.shape().to_vec(),
            right: vec![y.len()],
        });
    }
    for (index, &value) in y.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::LabelOutOfRange { index, value });
        }
    }
    let shape = s.shape().to_vec();
    let clamped = tape.clamp(s, 1e-7, 1.0 - 1e-7)?;
    let y_t = Tensor::new(y.to_vec(), &shape)?;
    let y_complement = Tensor::new(y.iter().map(|v| 1.0 - v).collect(), &shape)?;
    let log_s = tape.log(&clamped)?;
    let log_not_s = tape.log(&tape.offset(&tape.neg(&clamped)?, 1.0)?)?;
    let likelihood = tape.add(
        &tape.mul(&y_t, &log_s)?,
        &tape.mul(&y_complement, &log_not_s)?,
    )?;
    tape.neg(&tape.mean(&likelihood, None)?)
}
