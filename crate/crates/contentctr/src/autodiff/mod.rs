//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Tape`] records every operation; [`Tape::backward`] replays them in
//! reverse to produce gradients for any scalar objective. [`Parameter`] wraps
//! a trainable buffer, [`Adam`] updates parameter sets, and [`grad_check`]
//! verifies analytic gradients against central differences.

mod adam;
mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradReport};
pub use param::{ParamSet, Parameter};
pub use tape::{Gradients, Tape};
pub use tensor::{NodeRef, Tensor};
