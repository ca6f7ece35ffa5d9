//! Training loop with seeded shuffling, per-epoch checkpoints, and a CSV
//! trace. Everything a run touches is derived from one seed, and live state
//! is quantized to f32 at each epoch boundary so that a run is bit-identical
//! to the same run resumed from any of its own checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::data::{
    embed_windows, load_split, mix, read_dataset_manifest, EmbedProvider, SampleWindow, Split,
};
use crate::error::{Error, Result};
use crate::losses::{align_infonce, combined_loss, logloss, pairwise_batch_loss, shuffled_negatives};
use crate::metrics::windowed_tau;
use crate::model::{save_with_state, BatchInput, Model, TrainingState};
use crate::pipeline::csv_float;
use crate::pipeline::eval::window_scores;
use crate::pipeline::run_config::RunConfig;

pub const TRAINING_CSV: &str = "training.csv";
pub const CSV_HEADER: &str = "epoch,L_Point,L_Pair,L_align,train_tau,test_tau,avg_s_over_y";

const SALT_MODEL: u64 = 0x6d6f_646c;
const SALT_SHUFFLE: u64 = 0x7368_666c;
const SALT_NEGATIVES: u64 = 0x6e65_6773;

pub struct TrainOptions<'a> {
    pub config: &'a RunConfig,
    pub data_dir: &'a Path,
    pub out_dir: &'a Path,
    /// Overrides the config seed when set.
    pub seed: Option<u64>,
    /// Checkpoint directory or manifest to continue from.
    pub resume: Option<&'a Path>,
}

/// One finished epoch as recorded in the CSV. Losses are epoch means of the
/// unweighted components; taus and the calibration ratio come from the
/// quantized end-of-epoch model.
#[derive(Clone, Debug)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    pub l_point: f64,
    pub l_pair: f64,
    pub l_align: f64,
    pub train_tau: f64,
    pub test_tau: f64,
    pub avg_s_over_y: f64,
}

impl EpochRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            csv_float(self.l_point),
            csv_float(self.l_pair),
            csv_float(self.l_align),
            csv_float(self.train_tau),
            csv_float(self.test_tau),
            csv_float(self.avg_s_over_y)
        )
    }
}

pub struct TrainOutcome {
    /// Rows this run wrote, resumed runs only cover their own epochs.
    pub rows: Vec<EpochRow>,
    pub csv_path: PathBuf,
    /// Manifest of the final checkpoint.
    pub checkpoint: PathBuf,
    pub model: Model,
}

fn named_config_err(msg: String) -> Error {
    Error::Config(msg)
}

/// Mean per-window Kendall tau, NaN when no window has a decisive pair.
fn mean_window_tau(scores: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    let pairs = scores
        .iter()
        .zip(labels)
        .map(|(s, y)| (s.as_slice(), y.as_slice()));
    match windowed_tau(pairs) {
        Ok(wt) => Ok(wt.mean_tau),
        Err(Error::UndefinedTau) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

fn write_csv(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn train(options: &TrainOptions) -> Result<TrainOutcome> {
    let config = options.config;
    config.validate()?;

    let manifest = read_dataset_manifest(options.data_dir)?;
    let g = &manifest.generator;
    let m = &config.model;
    if g.n != m.n {
        return Err(named_config_err(format!(
            "dataset window length {} does not match model n {}",
            g.n, m.n
        )));
    }
    if g.d_visual != m.d_visual || g.d_text != m.d_text {
        return Err(named_config_err(format!(
            "dataset feature dims ({}, {}) do not match model ({}, {})",
            g.d_visual, g.d_text, m.d_visual, m.d_text
        )));
    }

    let train_windows = load_split(options.data_dir, Split::Train)?;
    let test_windows = load_split(options.data_dir, Split::Test)?;
    if train_windows.is_empty() {
        return Err(named_config_err("train split has no windows".into()));
    }
    for w in train_windows.iter().chain(test_windows.iter()) {
        if w.streamer_id as usize >= m.streamers {
            return Err(named_config_err(format!(
                "streamer id {} outside the model's table of {}",
                w.streamer_id, m.streamers
            )));
        }
    }

    fs::create_dir_all(options.out_dir).map_err(|e| Error::io(options.out_dir, e))?;
    let seed = options.seed.unwrap_or(config.seed);
    let (visual_provider, text_provider) =
        EmbedProvider::pair_for_dataset(g.d_visual, g.d_text, manifest.seed);

    let epochs = config.optimizer.epochs;
    let (mut model, mut adam, start_epoch) = match options.resume {
        None => {
            let mut model = Model::new(m.clone(), mix(seed, SALT_MODEL))?;
            // Canonical f32 start: training from scratch equals resuming
            // from the epoch-0 checkpoint.
            model = model.quantized_clone();
            let adam = Adam::new(AdamConfig::default());
            save_with_state(
                &model,
                options.out_dir,
                &TrainingState {
                    epoch: 0,
                    optimizer: Some(adam.export()),
                },
            )?;
            (model, adam, 0)
        }
        Some(path) => {
            let (model, state) = crate::model::load_with_state(path)?;
            if model.config != *m {
                return Err(named_config_err(
                    "checkpoint model config differs from the run config".into(),
                ));
            }
            if state.epoch >= epochs {
                return Err(named_config_err(format!(
                    "checkpoint is already at epoch {} of {}",
                    state.epoch, epochs
                )));
            }
            let adam = match state.optimizer {
                Some(s) => Adam::from_state(AdamConfig::default(), s),
                None => Adam::new(AdamConfig::default()),
            };
            (model, adam, state.epoch)
        }
    };

    let loss_cfg = &config.loss;
    let total = train_windows.len();
    let mut rows: Vec<EpochRow> = Vec::new();
    let csv_path = options.out_dir.join(TRAINING_CSV);
    let mut checkpoint = options.out_dir.join(crate::model::MANIFEST_NAME);

    for epoch in start_epoch..epochs {
        let lr = config
            .optimizer
            .schedule
            .learning_rate(config.optimizer.learning_rate, epoch, epochs);
        let mut order: Vec<usize> = (0..total).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(mix(seed, SALT_SHUFFLE), epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut sum_point = 0.0;
        let mut sum_pair = 0.0;
        let mut sum_align = 0.0;
        for (batch_index, chunk) in order.chunks(config.optimizer.batch_size).enumerate() {
            let refs: Vec<&SampleWindow> = chunk.iter().map(|&i| &train_windows[i]).collect();
            let batch = embed_windows(&refs, &visual_provider, &text_provider)?;
            let tape = Tape::new();
            let out = model.forward(
                &tape,
                &BatchInput {
                    visual: &batch.visual,
                    text: &batch.text,
                    streamer_ids: &batch.streamer_ids,
                },
            )?;

            let point = logloss(&tape, &out.s, &batch.labels)?;
            let pair = if loss_cfg.lambda_pair > 0.0 {
                pairwise_batch_loss(
                    &tape,
                    &out.s,
                    &batch.labels,
                    loss_cfg.pair_variant,
                    loss_cfg.sigma,
                )?
                .0
            } else {
                tape.leaf(vec![0.0], &[])?
            };
            let align = if loss_cfg.lambda_align > 0.0 {
                let mut acc = tape.leaf(vec![0.0], &[])?;
                for (wi, _) in refs.iter().enumerate() {
                    let anchor = tape.reshape(
                        &tape.slice(&out.text_projection, 0, wi, 1)?,
                        &[m.n, m.d],
                    )?;
                    let target = tape.reshape(
                        &tape.slice(&out.visual_projection, 0, wi, 1)?,
                        &[m.n, m.d],
                    )?;
                    let key = ((epoch as u64) << 40)
                        ^ ((batch_index as u64 & 0xff_ffff) << 16)
                        ^ (wi as u64 & 0xffff);
                    let negatives = shuffled_negatives(
                        m.n,
                        loss_cfg.negatives,
                        mix(mix(seed, SALT_NEGATIVES), key),
                    )?;
                    let window_align = align_infonce(
                        &tape,
                        &anchor,
                        &target,
                        &negatives,
                        loss_cfg.temperature,
                        loss_cfg.dtw_mode,
                        loss_cfg.tie_rule,
                    )?;
                    acc = tape.add(&acc, &window_align.loss)?;
                }
                tape.scale(&acc, 1.0 / refs.len() as f64)?
            } else {
                tape.leaf(vec![0.0], &[])?
            };

            let objective = combined_loss(&tape, &point, &align, &pair, loss_cfg)?;
            let objective_value = objective.item()?;
            if !objective_value.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1 });
            }
            let weight = refs.len() as f64;
            sum_point += point.item()? * weight;
            sum_pair += pair.item()? * weight;
            sum_align += align.item()? * weight;

            let grads = tape.backward(&objective)?;
            adam.step(&mut model, &grads, lr);
        }

        // The persisted f32 state is the real state: quantize before
        // measuring or continuing so checkpoints restart exactly here.
        model = model.quantized_clone();
        adam.quantize();

        let train_scores = window_scores(&model, &train_windows, &visual_provider, &text_provider)?;
        let train_labels: Vec<Vec<f64>> = train_windows.iter().map(|w| w.labels()).collect();
        let train_tau = mean_window_tau(&train_scores, &train_labels)?;
        let (test_tau, avg_s_over_y) = if test_windows.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let test_scores =
                window_scores(&model, &test_windows, &visual_provider, &text_provider)?;
            let test_labels: Vec<Vec<f64>> = test_windows.iter().map(|w| w.labels()).collect();
            let tau = mean_window_tau(&test_scores, &test_labels)?;
            let sum_s: f64 = test_scores.iter().flatten().sum();
            let sum_y: f64 = test_labels.iter().flatten().sum();
            (tau, sum_s / sum_y)
        };

        checkpoint = save_with_state(
            &model,
            options.out_dir,
            &TrainingState {
                epoch: epoch + 1,
                optimizer: Some(adam.export()),
            },
        )?;
        rows.push(EpochRow {
            epoch: epoch + 1,
            l_point: sum_point / total as f64,
            l_pair: sum_pair / total as f64,
            l_align: sum_align / total as f64,
            train_tau,
            test_tau,
            avg_s_over_y,
        });
        write_csv(&csv_path, &rows)?;
    }

    Ok(TrainOutcome {
        rows,
        csv_path,
        checkpoint,
        model,
    })
}
