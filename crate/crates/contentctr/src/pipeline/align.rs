//! Single-window alignment inspection: run one window through the model,
//! align its two projections, and report the similarity surface and path.

use crate::data::{embed_windows, EmbedProvider, SampleWindow};
use crate::error::Result;
use crate::losses::{cosine_similarity_matrix, dtw_align, DtwMode, TieRule};
use crate::model::{BatchInput, Model};
use crate::pipeline::csv_float;

#[derive(Clone, Debug)]
pub struct AlignReport {
    pub n: usize,
    /// Row-major n x n cosine similarities, text rows against visual columns.
    pub similarity: Vec<f64>,
    /// Monotone path from (1, 1) to (n, n), 1-based.
    pub path: Vec<(usize, usize)>,
    pub distance: f64,
    /// Lag the generator planted in this window.
    pub recorded_lag: i32,
}

pub fn align_window(
    model: &Model,
    window: &SampleWindow,
    visual: &EmbedProvider,
    text: &EmbedProvider,
    mode: DtwMode,
    tie: TieRule,
) -> Result<AlignReport> {
    let batch = embed_windows(&[window], visual, text)?;
    let tape = crate::autodiff::Tape::new();
    let out = model.forward(
        &tape,
        &BatchInput {
            visual: &batch.visual,
            text: &batch.text,
            streamer_ids: &batch.streamer_ids,
        },
    )?;
    let (n, d) = (model.config.n, model.config.d);
    let anchor = tape.reshape(&tape.slice(&out.text_projection, 0, 0, 1)?, &[n, d])?;
    let target = tape.reshape(&tape.slice(&out.visual_projection, 0, 0, 1)?, &[n, d])?;
    let similarity = cosine_similarity_matrix(&tape, &anchor, &target)?;
    let aligned = dtw_align(&tape, &similarity, mode, tie)?;
    Ok(AlignReport {
        n,
        similarity: aligned.result.similarity,
        path: aligned.result.path,
        distance: aligned.result.distance,
        recorded_lag: window.lag,
    })
}

/// Median of i - j along a 1-based path: the lag the alignment recovered.
/// Even path lengths average the two middle offsets.
pub fn median_path_offset(path: &[(usize, usize)]) -> f64 {
    let mut offsets: Vec<i64> = path
        .iter()
        .map(|&(i, j)| i as i64 - j as i64)
        .collect();
    offsets.sort_unstable();
    let mid = offsets.len() / 2;
    if offsets.len() % 2 == 1 {
        offsets[mid] as f64
    } else {
        (offsets[mid - 1] + offsets[mid]) as f64 / 2.0
    }
}

/// The n x n similarity matrix as headerless CSV rows.
pub fn similarity_csv(n: usize, similarity: &[f64]) -> String {
    let mut out = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| csv_float(similarity[i * n + j])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// The path as 1-based (i, j) rows under an `i,j` header.
pub fn path_csv(path: &[(usize, usize)]) -> String {
    let mut out = String::from("i,j\n");
    for &(i, j) in path {
        out.push_str(&format!("{i},{j}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_windows, GeneratorConfig};
    use crate::model::{MaskMode, ModelConfig};

    fn setup() -> (Model, Vec<SampleWindow>, EmbedProvider, EmbedProvider) {
        let generator = GeneratorConfig {
            streamers: 2,
            windows_per_streamer: 3,
            n: 6,
            d_visual: 6,
            d_text: 5,
            train_fraction: 1.0,
            lag_min: 1,
            lag_max: 2,
            ..GeneratorConfig::default()
        };
        let data = generate_windows(&generator, 31).unwrap();
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
                streamers: 2,
                mask: MaskMode::Causal,
                positional: true,
                pre_norm: false,
            },
            9,
        )
        .unwrap();
        let (vp, tp) = EmbedProvider::pair_for_dataset(6, 5, 31);
        (model, data.train, vp, tp)
    }

    #[test]
    fn report_has_a_monotone_path_over_a_square_surface() {
        let (model, windows, vp, tp) = setup();
        let report = align_window(
            &model,
            &windows[0],
            &vp,
            &tp,
            DtwMode::MinSimilarity,
            TieRule::default(),
        )
        .unwrap();
        assert_eq!(report.n, 6);
        assert_eq!(report.similarity.len(), 36);
        assert!(report.similarity.iter().all(|v| v.is_finite()));
        assert_eq!(report.path[0], (1, 1));
        assert_eq!(*report.path.last().unwrap(), (6, 6));
        for pair in report.path.windows(2) {
            let (di, dj) = (pair[1].0 - pair[0].0, pair[1].1 - pair[0].1);
            assert!(di <= 1 && dj <= 1 && di + dj >= 1);
        }
        assert_eq!(report.recorded_lag, windows[0].lag);
        assert!(report.recorded_lag >= 1 && report.recorded_lag <= 2);
    }

    #[test]
    fn alignment_is_deterministic() {
        let (model, windows, vp, tp) = setup();
        let run = || {
            align_window(
                &model,
                &windows[1],
                &vp,
                &tp,
                DtwMode::NegatedCost,
                TieRule::default(),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.similarity, b.similarity);
        assert_eq!(a.path, b.path);
        assert_eq!(a.distance, b.distance);
    }

    #[test]
    fn median_offset_handles_even_and_odd_paths() {
        assert_eq!(median_path_offset(&[(1, 1), (2, 2), (3, 3)]), 0.0);
        assert_eq!(median_path_offset(&[(1, 1), (2, 1), (3, 2), (4, 3)]), 1.0);
        assert_eq!(median_path_offset(&[(1, 1), (2, 1)]), 0.5);
    }

    #[test]
    fn csv_renderers_pin_their_layout() {
        let sim = similarity_csv(2, &[1.0, 0.5, 0.25, -1.0]);
        assert_eq!(
            sim,
            "1.00000000e0,5.00000000e-1\n2.50000000e-1,-1.00000000e0\n"
        );
        let path = path_csv(&[(1, 1), (2, 2)]);
        assert_eq!(path, "i,j\n1,1\n2,2\n");
    }
}
