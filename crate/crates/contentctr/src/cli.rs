//! Command-line front end over the pipeline. Exit codes: 0 success, 1 for
//! rejected inputs or configs, 2 for runtime failures, 3 for a failed
//! gradient check.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::data::{
    generate_windows, load_split, read_dataset_manifest, write_dataset, EmbedProvider, FileFormat,
    Split,
};
use crate::error::{Error, Result};
use crate::losses::{DtwMode, TieRule};
use crate::model::Model;
use crate::pipeline::{
    align_window, evaluate, load_run_config, median_path_offset, path_csv, predictions_csv,
    run_ablation, run_gradcheck, similarity_csv, train, TrainOptions, GRADCHECK_TOLERANCE,
};

#[derive(Parser)]
#[command(
    name = "contentctr",
    version,
    about = "Frame-level CTR prediction over synthetic live streams"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Jsonl,
    Binary,
}

impl From<FormatArg> for FileFormat {
    fn from(value: FormatArg) -> Self {
        match value {
            FormatArg::Jsonl => FileFormat::Jsonl,
            FormatArg::Binary => FileFormat::Binary,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(value: SplitArg) -> Self {
        match value {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    MinSimilarity,
    NegatedCost,
}

impl From<ModeArg> for DtwMode {
    fn from(value: ModeArg) -> Self {
        match value {
            ModeArg::MinSimilarity => DtwMode::MinSimilarity,
            ModeArg::NegatedCost => DtwMode::NegatedCost,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory from a run config.
    Generate {
        /// Run config JSON; its generator section and seed drive the data.
        #[arg(long)]
        config: PathBuf,
        /// Directory to create the dataset in.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// On-disk encoding of the window files.
        #[arg(long, value_enum, default_value = "jsonl")]
        format: FormatArg,
    },
    /// Train a model on a dataset directory, checkpointing every epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory written by generate.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for training.csv and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint directory or manifest to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        /// Checkpoint directory or manifest.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Labels at or above this count as positives for mAP.
        #[arg(long, default_value_t = 0.5)]
        map_threshold: f64,
        /// Also write metrics.json and predictions.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the six loss ablations on one dataset and summarize them.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed for every ablation run.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Align one window's projections and write the surface and path.
    Align {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Window index within the chosen split.
        #[arg(long)]
        sample: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "min-similarity")]
        mode: ModeArg,
        /// Output directory for similarity.csv and path.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify analytic gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Exit code for an error, per the contract above.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::GradCheckFailed { .. } => 3,
        Error::Io { .. } | Error::Format { .. } | Error::Json(_) | Error::Diverged { .. } => 2,
        Error::Config(_)
        | Error::BadShape { .. }
        | Error::ShapeMismatch { .. }
        | Error::IndexOutOfBounds { .. }
        | Error::LabelOutOfRange { .. }
        | Error::SequenceTooShort { .. } => 1,
        _ => 2,
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn run() -> u8 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version print to stdout and succeed; usage errors
            // are input validation
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            config,
            out,
            seed,
            format,
        } => cmd_generate(&config, &out, seed, format.into()),
        Command::Train {
            config,
            data,
            out,
            seed,
            resume,
        } => cmd_train(&config, &data, &out, seed, resume.as_deref()),
        Command::Eval {
            ckpt,
            data,
            split,
            map_threshold,
            out,
        } => cmd_eval(&ckpt, &data, split.into(), map_threshold, out.as_deref()),
        Command::Ablate {
            config,
            data,
            out,
            seed,
        } => cmd_ablate(&config, &data, &out, seed),
        Command::Align {
            ckpt,
            data,
            sample,
            split,
            mode,
            out,
        } => cmd_align(&ckpt, &data, sample, split.into(), mode.into(), &out),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
    }
}

/// Rejects writing outputs into the dataset directory.
fn ensure_distinct(data: &Path, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let canon = |p: &Path| fs::canonicalize(p).map_err(|e| Error::io(p, e));
    if canon(data)? == canon(out)? {
        return Err(Error::Config(
            "data and output directories must be distinct".into(),
        ));
    }
    Ok(())
}

fn cmd_generate(config: &Path, out: &Path, seed: Option<u64>, format: FileFormat) -> Result<()> {
    let run_config = load_run_config(config)?;
    let seed = seed.unwrap_or(run_config.seed);
    let data = generate_windows(&run_config.generator, seed)?;
    let manifest = write_dataset(out, &data, &run_config.generator, seed, format)?;
    println!(
        "wrote {} train and {} test windows to {} ({:?} format, seed {})",
        manifest.train.windows,
        manifest.test.windows,
        out.display(),
        format,
        seed
    );
    Ok(())
}

fn cmd_train(
    config: &Path,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    resume: Option<&Path>,
) -> Result<()> {
    let run_config = load_run_config(config)?;
    ensure_distinct(data, out)?;
    let outcome = train(&TrainOptions {
        config: &run_config,
        data_dir: data,
        out_dir: out,
        seed,
        resume,
    })?;
    for row in &outcome.rows {
        println!(
            "epoch {:>3}  L_Point {:.6}  L_Pair {:.6}  L_align {:.6}  train_tau {:.4}  test_tau {:.4}  s/y {:.4}",
            row.epoch, row.l_point, row.l_pair, row.l_align, row.train_tau, row.test_tau, row.avg_s_over_y
        );
    }
    println!("trace: {}", outcome.csv_path.display());
    println!("checkpoint: {}", outcome.checkpoint.display());
    Ok(())
}

fn load_model_for_dataset(ckpt: &Path, data: &Path) -> Result<(Model, EmbedProvider, EmbedProvider, u64)> {
    let model = crate::model::load(ckpt)?;
    let manifest = read_dataset_manifest(data)?;
    let g = &manifest.generator;
    let c = &model.config;
    if g.n != c.n || g.d_visual != c.d_visual || g.d_text != c.d_text {
        return Err(Error::Config(format!(
            "dataset shape (n {}, visual {}, text {}) does not match checkpoint (n {}, visual {}, text {})",
            g.n, g.d_visual, g.d_text, c.n, c.d_visual, c.d_text
        )));
    }
    let (vp, tp) = EmbedProvider::pair_for_dataset(g.d_visual, g.d_text, manifest.seed);
    Ok((model, vp, tp, manifest.seed))
}

fn cmd_eval(
    ckpt: &Path,
    data: &Path,
    split: Split,
    map_threshold: f64,
    out: Option<&Path>,
) -> Result<()> {
    let (model, vp, tp, _) = load_model_for_dataset(ckpt, data)?;
    let windows = load_split(data, split)?;
    let outcome = evaluate(&model, &windows, &vp, &tp, map_threshold)?;
    println!("{}", serde_json::to_string_pretty(&outcome.report)?);
    eprintln!(
        "tau over {} of {} windows; mAP over {} groups ({} without positives)",
        outcome.windows_used,
        windows.len(),
        outcome.groups_used,
        outcome.groups_skipped
    );
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let metrics_path = dir.join("metrics.json");
        let json = serde_json::to_string_pretty(&outcome.report)?;
        fs::write(&metrics_path, json).map_err(|e| Error::io(&metrics_path, e))?;
        let csv_path = dir.join("predictions.csv");
        fs::write(&csv_path, predictions_csv(&outcome.predictions))
            .map_err(|e| Error::io(&csv_path, e))?;
        eprintln!("wrote {} and {}", metrics_path.display(), csv_path.display());
    }
    Ok(())
}

fn cmd_ablate(config: &Path, data: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let run_config = load_run_config(config)?;
    ensure_distinct(data, out)?;
    let outcome = run_ablation(&run_config, data, out, seed)?;
    let mut failures = 0;
    for row in &outcome.rows {
        match &row.outcome {
            Ok((tau, avg)) => println!("{:<8} tau {:.4}  s/y {:.4}", row.model, tau, avg),
            Err(msg) => {
                failures += 1;
                println!("{:<8} failed: {msg}", row.model);
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} of {} runs failed", outcome.rows.len());
    }
    println!("summary: {}", outcome.csv_path.display());
    Ok(())
}

fn cmd_align(
    ckpt: &Path,
    data: &Path,
    sample: usize,
    split: Split,
    mode: DtwMode,
    out: &Path,
) -> Result<()> {
    let (model, vp, tp, _) = load_model_for_dataset(ckpt, data)?;
    let windows = load_split(data, split)?;
    if sample >= windows.len() {
        return Err(Error::Config(format!(
            "sample {sample} out of range: the {split} split has {} windows",
            windows.len()
        )));
    }
    let report = align_window(&model, &windows[sample], &vp, &tp, mode, TieRule::default())?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let sim_path = out.join("similarity.csv");
    fs::write(&sim_path, similarity_csv(report.n, &report.similarity))
        .map_err(|e| Error::io(&sim_path, e))?;
    let path_path = out.join("path.csv");
    fs::write(&path_path, path_csv(&report.path)).map_err(|e| Error::io(&path_path, e))?;
    println!(
        "window {sample}: distance {:.6}, recorded lag {}, median path offset {:.1}",
        report.distance,
        report.recorded_lag,
        median_path_offset(&report.path)
    );
    println!("wrote {} and {}", sim_path.display(), path_path.display());
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let outcomes = run_gradcheck(seed)?;
    let mut worst: Option<(&'static str, f64)> = None;
    for o in &outcomes {
        println!(
            "{:<26} max_rel_err {:>12.4e}  tol {:.0e}  {}",
            o.target,
            o.max_rel_error,
            o.tolerance,
            if o.passed { "PASS" } else { "FAIL" }
        );
        if !o.passed && worst.map_or(true, |(_, w)| o.max_rel_error > w) {
            worst = Some((o.target, o.max_rel_error));
        }
    }
    if let Some((target, err)) = worst {
        return Err(Error::GradCheckFailed {
            target: target.to_string(),
            err,
            tol: GRADCHECK_TOLERANCE,
        });
    }
    println!("all {} targets passed", outcomes.len());
    Ok(())
}
