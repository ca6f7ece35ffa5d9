//! Sweeps the loss configurations side by side on one dataset: pointwise
//! only, each pairwise admission rule, and the full combined objective.

use contentctr::data::{generate_windows, write_dataset, FileFormat};
use contentctr::pipeline::{load_run_config, run_ablation, ABLATION_HEADER};
use contentctr::Result;

fn main() -> Result<()> {
    let mut config = load_run_config("configs/desk.json".as_ref())?;
    // Moderate label noise separates the admission rules: margin-aware
    // filtering pays off, chasing misordered pairs does not.
    config.generator.label_noise_scale = 0.4;
    config.generator.windows_per_streamer = 30;
    config.loss.lambda_pair = 0.5;
    config.optimizer.epochs = 8;

    let root = std::env::temp_dir().join("contentctr_ablation_example");
    let _ = std::fs::remove_dir_all(&root);
    let data_dir = root.join("data");
    let seed = 11;
    let data = generate_windows(&config.generator, seed)?;
    write_dataset(&data_dir, &data, &config.generator, seed, FileFormat::Jsonl)?;

    let sweep = run_ablation(&config, &data_dir, &root.join("sweep"), Some(seed))?;
    println!("{ABLATION_HEADER}");
    for row in &sweep.rows {
        match &row.outcome {
            Ok((tau, ratio)) => println!("{},{tau:.4},{ratio:.4}", row.model),
            Err(e) => println!("{},failed ({e}),failed", row.model),
        }
    }
    Ok(())
}
