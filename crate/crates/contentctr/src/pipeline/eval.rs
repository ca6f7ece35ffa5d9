//! Checkpoint evaluation: chunked scoring plus ranking metrics.

use crate::data::{embed_windows, EmbedProvider, SampleWindow};
use crate::error::{Error, Result};
use crate::metrics::{mean_average_precision, windowed_tau, MetricsReport, TauCounts};
use crate::model::{BatchInput, Model};
use crate::pipeline::csv_float;

/// Windows scored per forward pass; bounds tape size without changing
/// results, since inference math is per window.
const SCORE_CHUNK: usize = 64;

/// One scored segment, in window order then segment order.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub window: usize,
    pub timestamp: usize,
    pub s: f64,
    pub y: f64,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    /// Windows with at least one decisive label pair.
    pub windows_used: usize,
    pub windows_skipped: usize,
    /// Windows with at least one positive label.
    pub groups_used: usize,
    pub groups_skipped: usize,
    pub predictions: Vec<PredictionRow>,
}

/// Scores every window with a fresh tape per chunk, returning one score
/// vector per window.
pub fn window_scores(
    model: &Model,
    windows: &[SampleWindow],
    visual: &EmbedProvider,
    text: &EmbedProvider,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(SCORE_CHUNK) {
        let refs: Vec<&SampleWindow> = chunk.iter().collect();
        let batch = embed_windows(&refs, visual, text)?;
        let s = model.predict(&BatchInput {
            visual: &batch.visual,
            text: &batch.text,
            streamer_ids: &batch.streamer_ids,
        })?;
        for i in 0..chunk.len() {
            out.push(s[i * batch.n..(i + 1) * batch.n].to_vec());
        }
    }
    Ok(out)
}

/// Evaluates `model` on `windows`. Kendall tau is averaged per window over
/// windows with a decisive pair; mAP treats each window as a group whose
/// positives are the segments with label at or above `map_threshold`.
pub fn evaluate(
    model: &Model,
    windows: &[SampleWindow],
    visual: &EmbedProvider,
    text: &EmbedProvider,
    map_threshold: f64,
) -> Result<EvalOutcome> {
    if windows.is_empty() {
        return Err(Error::Config("evaluation split has no windows".into()));
    }
    if !map_threshold.is_finite() {
        return Err(Error::Config(format!(
            "map_threshold must be finite, got {map_threshold}"
        )));
    }
    let scores = window_scores(model, windows, visual, text)?;
    let labels: Vec<Vec<f64>> = windows.iter().map(|w| w.labels()).collect();

    let tau_pairs = scores
        .iter()
        .zip(&labels)
        .map(|(s, y)| (s.as_slice(), y.as_slice()));
    let (tau, counts, windows_used, windows_skipped) = match windowed_tau(tau_pairs) {
        Ok(wt) => (
            Some(wt.mean_tau),
            wt.counts,
            wt.windows_used,
            wt.windows_skipped,
        ),
        Err(Error::UndefinedTau) => (
            None,
            TauCounts {
                p: 0,
                q: 0,
                t: 0,
                u: 0,
            },
            0,
            windows.len(),
        ),
        Err(e) => return Err(e),
    };

    let positive: Vec<Vec<bool>> = labels
        .iter()
        .map(|y| y.iter().map(|&v| v >= map_threshold).collect())
        .collect();
    let map = mean_average_precision(
        scores
            .iter()
            .zip(&positive)
            .map(|(s, p)| (s.as_slice(), p.as_slice())),
    )?;

    let mut predictions = Vec::new();
    for (window, (s, y)) in scores.iter().zip(&labels).enumerate() {
        for (timestamp, (&si, &yi)) in s.iter().zip(y).enumerate() {
            predictions.push(PredictionRow {
                window,
                timestamp,
                s: si,
                y: yi,
            });
        }
    }

    Ok(EvalOutcome {
        report: MetricsReport {
            tau,
            p: counts.p,
            q: counts.q,
            t: counts.t,
            u: counts.u,
            map: map.map,
        },
        windows_used,
        windows_skipped,
        groups_used: map.groups_used,
        groups_skipped: map.groups_skipped,
        predictions,
    })
}

/// Renders per-segment predictions as CSV. Header is part of the output
/// contract.
pub fn predictions_csv(predictions: &[PredictionRow]) -> String {
    let mut out = String::from("window,timestamp,s,y\n");
    for row in predictions {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.window,
            row.timestamp,
            csv_float(row.s),
            csv_float(row.y)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_windows, GeneratorConfig};
    use crate::model::{MaskMode, ModelConfig};

    fn small_setup() -> (Model, Vec<SampleWindow>, EmbedProvider, EmbedProvider) {
        let gen = GeneratorConfig {
            streamers: 3,
            windows_per_streamer: 4,
            n: 6,
            d_visual: 6,
            d_text: 5,
            train_fraction: 1.0,
            ..GeneratorConfig::default()
        };
        let data = generate_windows(&gen, 11).unwrap();
        let model = Model::new(
            ModelConfig {
                n: 6,
                d: 8,
                n_heads: 2,
                d_head: 4,
                perceiver_layers: 1,
                decoder_layers: 1,
                ffn_hidden: 16,
                d_visual: 6,
                d_text: 5,
                streamers: 3,
                mask: MaskMode::Causal,
                positional: true,
                pre_norm: false,
            },
            5,
        )
        .unwrap();
        let (vp, tp) = EmbedProvider::pair_for_dataset(6, 5, 11);
        (model, data.train, vp, tp)
    }

    #[test]
    fn chunked_scores_match_a_single_batch() {
        let (model, windows, vp, tp) = small_setup();
        let per_window = window_scores(&model, &windows, &vp, &tp).unwrap();
        let refs: Vec<&SampleWindow> = windows.iter().collect();
        let batch = embed_windows(&refs, &vp, &tp).unwrap();
        let all = model
            .predict(&BatchInput {
                visual: &batch.visual,
                text: &batch.text,
                streamer_ids: &batch.streamer_ids,
            })
            .unwrap();
        let flat: Vec<f64> = per_window.into_iter().flatten().collect();
        assert_eq!(flat, all);
    }

    #[test]
    fn outcome_counts_and_predictions_line_up() {
        let (model, windows, vp, tp) = small_setup();
        let out = evaluate(&model, &windows, &vp, &tp, 0.5).unwrap();
        assert_eq!(out.windows_used + out.windows_skipped, windows.len());
        assert_eq!(out.groups_used + out.groups_skipped, windows.len());
        assert_eq!(out.predictions.len(), windows.len() * 6);
        assert_eq!(out.predictions[0].window, 0);
        assert_eq!(out.predictions[7].window, 1);
        assert_eq!(out.predictions[7].timestamp, 1);
        for row in &out.predictions {
            assert!(row.s > 0.0 && row.s < 1.0);
            let expected = windows[row.window].segments[row.timestamp].ctr as f64;
            assert_eq!(row.y, expected);
        }
    }

    #[test]
    fn constant_labels_leave_tau_null_but_not_map() {
        let (model, mut windows, vp, tp) = small_setup();
        for w in &mut windows {
            for seg in &mut w.segments {
                seg.ctr = 0.75;
            }
        }
        let out = evaluate(&model, &windows, &vp, &tp, 0.5).unwrap();
        assert_eq!(out.report.tau, None);
        assert_eq!(out.windows_used, 0);
        assert_eq!(out.windows_skipped, windows.len());
        assert!(out.report.map.is_some());
        assert_eq!(out.groups_used, windows.len());
    }

    #[test]
    fn threshold_above_every_label_skips_every_group() {
        let (model, windows, vp, tp) = small_setup();
        let out = evaluate(&model, &windows, &vp, &tp, 2.0).unwrap();
        assert_eq!(out.report.map, None);
        assert_eq!(out.groups_used, 0);
    }

    #[test]
    fn predictions_csv_has_the_pinned_header() {
        let rows = vec![PredictionRow {
            window: 2,
            timestamp: 0,
            s: 0.5,
            y: 1.0,
        }];
        let csv = predictions_csv(&rows);
        assert_eq!(
            csv,
            "window,timestamp,s,y\n2,0,5.00000000e-1,1.00000000e0\n"
        );
    }

    #[test]
    fn empty_split_is_rejected() {
        let (model, _, vp, tp) = small_setup();
        assert!(evaluate(&model, &[], &vp, &tp, 0.5).is_err());
    }
}
