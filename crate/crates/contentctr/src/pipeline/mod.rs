//! End-to-end runs: training, evaluation, ablation sweeps, alignment
//! inspection, and gradient checking, shared by the CLI and the examples.

pub mod ablate;
pub mod align;
pub mod eval;
pub mod gradcheck;
pub mod run_config;
pub mod train;

pub use ablate::{run_ablation, AblationOutcome, AblationRow, ABLATION_CSV, ABLATION_HEADER};
pub use align::{align_window, median_path_offset, path_csv, similarity_csv, AlignReport};
pub use eval::{evaluate, predictions_csv, window_scores, EvalOutcome, PredictionRow};
pub use gradcheck::{run_gradcheck, CheckOutcome, GRADCHECK_TARGETS, GRADCHECK_TOLERANCE};
pub use run_config::{load_run_config, OptimizerConfig, RunConfig, Schedule};
pub use train::{train, EpochRow, TrainOptions, TrainOutcome, CSV_HEADER, TRAINING_CSV};

/// Float formatting shared by every CSV this crate writes: nine significant
/// digits, enough to round-trip an f32 exactly.
pub(crate) fn csv_float(v: f64) -> String {
    format!("{v:.8e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_floats_carry_nine_significant_digits() {
        assert_eq!(csv_float(0.5), "5.00000000e-1");
        assert_eq!(csv_float(0.0), "0.00000000e0");
        assert_eq!(csv_float(-123.456), "-1.23456000e2");
        assert_eq!(csv_float(f64::NAN), "NaN");
    }
}
