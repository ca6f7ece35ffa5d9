//! Frame-level click-through-rate prediction for live streams.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;

pub use error::{Error, Result};
