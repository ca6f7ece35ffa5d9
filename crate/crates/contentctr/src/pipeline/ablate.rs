//! Loss-term ablation: six configurations trained from the same seed on the
//! same data, reported side by side.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::losses::{LossConfig, PairVariant};
use crate::pipeline::csv_float;
use crate::pipeline::run_config::RunConfig;
use crate::pipeline::train::{train, TrainOptions};

pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_HEADER: &str = "model,tau,avg_s_over_y";

/// The six configurations, derived from a base loss config: pointwise only,
/// then each pair-admission variant without alignment, then the full
/// combination as configured.
pub fn ablation_specs(base: &LossConfig) -> Vec<(&'static str, LossConfig)> {
    let no_align = |variant: PairVariant| LossConfig {
        lambda_align: 0.0,
        pair_variant: variant,
        ..base.clone()
    };
    vec![
        (
            "Model1",
            LossConfig {
                lambda_pair: 0.0,
                lambda_align: 0.0,
                ..base.clone()
            },
        ),
        ("Model2", no_align(PairVariant::All)),
        ("Model3", no_align(PairVariant::UnderMargin)),
        ("Model4", no_align(PairVariant::Misordered)),
        ("Model5", no_align(PairVariant::UnderSeparated)),
        ("Ours", base.clone()),
    ]
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub model: &'static str,
    /// Final-epoch (test tau, avg_s_over_y), or the failure message.
    pub outcome: std::result::Result<(f64, f64), String>,
}

pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    pub csv_path: PathBuf,
}

fn render_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for row in rows {
        match &row.outcome {
            Ok((tau, avg)) => {
                out.push_str(&format!(
                    "{},{},{}\n",
                    row.model,
                    csv_float(*tau),
                    csv_float(*avg)
                ));
            }
            Err(_) => out.push_str(&format!("{},failed,failed\n", row.model)),
        }
    }
    out
}

/// Trains every spec into its own subdirectory of `out_dir` and writes the
/// summary CSV. A failing spec is recorded as failed and the sweep moves on.
pub fn run_ablation(
    config: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<AblationOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join(ABLATION_CSV);
    let mut rows = Vec::new();
    for (name, loss) in ablation_specs(&config.loss) {
        let mut spec_config = config.clone();
        spec_config.loss = loss;
        let sub = out_dir.join(name.to_lowercase());
        let outcome = train(&TrainOptions {
            config: &spec_config,
            data_dir,
            out_dir: &sub,
            seed,
            resume: None,
        });
        rows.push(AblationRow {
            model: name,
            outcome: match outcome {
                Ok(done) => {
                    let last = done.rows.last().expect("training ran at least one epoch");
                    Ok((last.test_tau, last.avg_s_over_y))
                }
                Err(e) => Err(e.to_string()),
            },
        });
        fs::write(&csv_path, render_csv(&rows)).map_err(|e| Error::io(&csv_path, e))?;
    }
    Ok(AblationOutcome { rows, csv_path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_windows, write_dataset, FileFormat};
    use crate::pipeline::run_config::tests::desk_run_config;

    #[test]
    fn specs_cover_the_variants_in_order() {
        let base = LossConfig::default();
        let specs = ablation_specs(&base);
        let names: Vec<&str> = specs.iter().map(|(n, _)| *n).collect();
        assert_eq!(
            names,
            ["Model1", "Model2", "Model3", "Model4", "Model5", "Ours"]
        );
        assert_eq!(specs[0].1.lambda_pair, 0.0);
        assert_eq!(specs[0].1.lambda_align, 0.0);
        for (_, loss) in &specs[1..5] {
            assert_eq!(loss.lambda_align, 0.0);
            assert_eq!(loss.lambda_pair, base.lambda_pair);
        }
        assert_eq!(specs[1].1.pair_variant, PairVariant::All);
        assert_eq!(specs[2].1.pair_variant, PairVariant::UnderMargin);
        assert_eq!(specs[3].1.pair_variant, PairVariant::Misordered);
        assert_eq!(specs[4].1.pair_variant, PairVariant::UnderSeparated);
        assert_eq!(specs[5].1, base);
    }

    #[test]
    fn sweep_writes_one_row_per_spec() {
        let mut config = desk_run_config();
        config.optimizer.epochs = 1;
        let tmp = tempfile::tempdir().unwrap();
        let data_dir = tmp.path().join("data");
        let data = generate_windows(&config.generator, 41).unwrap();
        write_dataset(&data_dir, &data, &config.generator, 41, FileFormat::Binary).unwrap();

        let out = run_ablation(&config, &data_dir, &tmp.path().join("sweep"), None).unwrap();
        assert_eq!(out.rows.len(), 6);
        for row in &out.rows {
            let (tau, avg) = row.outcome.as_ref().expect("spec trains cleanly");
            assert!(tau.is_finite());
            assert!(avg.is_finite());
        }
        let csv = fs::read_to_string(&out.csv_path).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], ABLATION_HEADER);
        assert_eq!(lines.len(), 7);
        assert!(lines[1].starts_with("Model1,"));
        assert!(lines[6].starts_with("Ours,"));
        // each spec left a loadable checkpoint behind
        for name in ["model1", "model2", "model3", "model4", "model5", "ours"] {
            let manifest = tmp.path().join("sweep").join(name).join("checkpoint.json");
            assert!(manifest.exists(), "{name}");
        }
    }

    #[test]
    fn failing_specs_are_marked_and_skipped_over() {
        let mut config = desk_run_config();
        config.optimizer.epochs = 1;
        let tmp = tempfile::tempdir().unwrap();
        let data_dir = tmp.path().join("data");
        let data = generate_windows(&config.generator, 42).unwrap();
        write_dataset(&data_dir, &data, &config.generator, 42, FileFormat::Binary).unwrap();

        // dataset shaped for n=8 but the run now expects n=6: every row fails
        config.generator.n = 6;
        config.model.n = 6;
        let out = run_ablation(&config, &data_dir, &tmp.path().join("sweep"), None).unwrap();
        assert_eq!(out.rows.len(), 6);
        for row in &out.rows {
            assert!(row.outcome.is_err());
        }
        let csv = fs::read_to_string(&out.csv_path).unwrap();
        for line in csv.lines().skip(1) {
            assert!(line.ends_with(",failed,failed"));
        }
    }
}
