//! Trains briefly, reloads the checkpoint from disk, and scores the held-out
//! split: per-window rank correlation, pair counts, and mean average
//! precision over streamer groups.

use contentctr::data::{
    generate_windows, load_split, read_dataset_manifest, write_dataset, EmbedProvider,
    FileFormat, Split,
};
use contentctr::model::load_with_state;
use contentctr::pipeline::{evaluate, load_run_config, train, TrainOptions};
use contentctr::Result;

fn main() -> Result<()> {
    let mut config = load_run_config("configs/desk.json".as_ref())?;
    config.generator.windows_per_streamer = 25;
    config.optimizer.epochs = 6;

    let root = std::env::temp_dir().join("contentctr_eval_example");
    let _ = std::fs::remove_dir_all(&root);
    let data_dir = root.join("data");
    let data = generate_windows(&config.generator, config.seed)?;
    write_dataset(&data_dir, &data, &config.generator, config.seed, FileFormat::Jsonl)?;
    let outcome = train(&TrainOptions {
        config: &config,
        data_dir: &data_dir,
        out_dir: &root.join("run"),
        seed: None,
        resume: None,
    })?;

    // Reload from disk exactly as a separate process would.
    let (model, state) = load_with_state(&outcome.checkpoint)?;
    println!("loaded checkpoint at epoch {}", state.epoch);

    let manifest = read_dataset_manifest(&data_dir)?;
    let (visual, text) = EmbedProvider::pair_for_dataset(
        model.config.d_visual,
        model.config.d_text,
        manifest.seed,
    );
    let windows = load_split(&data_dir, Split::Test)?;
    let eval = evaluate(&model, &windows, &visual, &text, 0.5)?;

    let r = &eval.report;
    println!(
        "tau {}  (P {} Q {} T {} U {})",
        r.tau.map_or("undefined".into(), |t| format!("{t:.4}")),
        r.p, r.q, r.t, r.u
    );
    println!(
        "mAP {}  over {} groups ({} skipped)",
        r.map.map_or("undefined".into(), |m| format!("{m:.4}")),
        eval.groups_used,
        eval.groups_skipped
    );
    for row in eval.predictions.iter().take(4) {
        println!(
            "  window {} t={}  s {:.4}  y {:.4}",
            row.window, row.timestamp, row.s, row.y
        );
    }
    Ok(())
}
