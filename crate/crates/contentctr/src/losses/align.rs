//! Contrastive alignment between the text projection and the visual
//! projection of one window. The positive score aligns the true pairing;
//! negatives align against row-shuffled copies of the visual projection, and
//! a temperature-scaled softmax contrast pushes the positive above them.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::losses::dtw::{cosine_similarity_matrix, dtw_align, DtwMode, DtwResult, TieRule};

/// `count` random row permutations of 0..n, each guaranteed not to be the
/// identity (identity draws are rejected and redrawn). Deterministic in
/// `seed`. Needs n >= 2; a single row cannot be shuffled into a negative.
pub fn shuffled_negatives(n: usize, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n < 2 {
        return Err(Error::SequenceTooShort {
            op: "shuffled_negatives",
            len: n,
            min: 2,
        });
    }
    if count == 0 {
        return Err(Error::Config(
            "alignment needs at least one negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identity: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut perm = identity.clone();
        perm.shuffle(&mut rng);
        if perm != identity {
            out.push(perm);
        }
    }
    Ok(out)
}

pub struct AlignOutput {
    /// Scalar loss on the tape.
    pub loss: Tensor,
    /// Alignment of the true pairing.
    pub positive: DtwResult,
    /// Scores of the shuffled pairings.
    pub negative_distances: Vec<f64>,
}

/// InfoNCE over alignment scores: -log of the positive's share of
/// exp(score / temperature) mass across the positive and all negatives.
/// `s_a` and `s_p` are (n, d) on the tape; `negatives` are row permutations
/// applied to `s_p`.
pub fn align_infonce(
    tape: &Tape,
    s_a: &Tensor,
    s_p: &Tensor,
    negatives: &[Vec<usize>],
    temperature: f64,
    mode: DtwMode,
    tie: TieRule,
) -> Result<AlignOutput> {
    if s_a.shape() != s_p.shape() || s_a.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "align_infonce",
            left: s_a.shape().to_vec(),
            right: s_p.shape().to_vec(),
        });
    }
    if negatives.is_empty() {
        return Err(Error::Config(
            "alignment needs at least one negative".into(),
        ));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let n = s_a.shape()[0];
    for perm in negatives {
        if perm.len() != n {
            return Err(Error::BadShape {
                op: "align_infonce",
                msg: format!("negative permutation of length {}", perm.len()),
                shape: s_p.shape().to_vec(),
            });
        }
    }

    let positive = dtw_align(tape, &cosine_similarity_matrix(tape, s_a, s_p)?, mode, tie)?;
    let mut scores = vec![tape.reshape(&positive.score, &[1])?];
    let mut negative_distances = Vec::with_capacity(negatives.len());
    for perm in negatives {
        let shuffled = tape.gather_rows(s_p, perm)?;
        let out = dtw_align(
            tape,
            &cosine_similarity_matrix(tape, s_a, &shuffled)?,
            mode,
            tie,
        )?;
        negative_distances.push(out.result.distance);
        scores.push(tape.reshape(&out.score, &[1])?);
    }

    let stacked = {
        let refs: Vec<&Tensor> = scores.iter().collect();
        tape.concat(&refs, 0)?
    };
    let logits = tape.scale(&stacked, 1.0 / temperature)?;
    // max-shift before exponentiation; the shift cancels in the softmax but
    // must be added back inside the log term
    let max = logits
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.offset(&logits, -max)?;
    let log_denom = tape.offset(&tape.log(&tape.sum(&tape.exp(&shifted)?, None)?)?, max)?;
    let pos_logit = tape.reshape(&tape.slice(&logits, 0, 0, 1)?, &[])?;
    let loss = tape.add(&tape.neg(&pos_logit)?, &log_denom)?;

    Ok(AlignOutput {
        loss,
        positive: positive.result,
        negative_distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::dtw::Step;

    #[test]
    fn negatives_are_non_identity_permutations() {
        let negs = shuffled_negatives(6, 10, 42).unwrap();
        assert_eq!(negs.len(), 10);
        let identity: Vec<usize> = (0..6).collect();
        for perm in &negs {
            assert_ne!(perm, &identity);
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, identity);
        }
        // deterministic in the seed
        assert_eq!(negs, shuffled_negatives(6, 10, 42).unwrap());
        assert_ne!(negs, shuffled_negatives(6, 10, 43).unwrap());
    }

    #[test]
    fn two_rows_always_swap() {
        for perm in shuffled_negatives(2, 8, 7).unwrap() {
            assert_eq!(perm, vec![1, 0]);
        }
    }

    #[test]
    fn one_row_cannot_produce_negatives() {
        assert!(matches!(
            shuffled_negatives(1, 4, 0),
            Err(Error::SequenceTooShort { .. })
        ));
    }

    fn rows(tape: &Tape, vals: &[f64], n: usize, d: usize) -> Tensor {
        tape.leaf(vals.to_vec(), &[n, d]).unwrap()
    }

    /// All rows identical: every pairing scores the same, so the contrast is
    /// exactly ln(negatives + 1).
    #[test]
    fn identical_rows_hit_the_uniform_floor() {
        let tape = Tape::new();
        let vals: Vec<f64> = [0.3, 0.7].repeat(4);
        let s_a = rows(&tape, &vals, 4, 2);
        let s_p = rows(&tape, &vals, 4, 2);
        let negs = shuffled_negatives(4, 8, 1).unwrap();
        let out = align_infonce(
            &tape,
            &s_a,
            &s_p,
            &negs,
            1.0,
            DtwMode::MinSimilarity,
            TieRule::default(),
        )
        .unwrap();
        assert!((out.loss.item().unwrap() - 9.0f64.ln()).abs() < 1e-9);
        for d in &out.negative_distances {
            assert!((d - out.positive.distance).abs() < 1e-9);
        }
    }

    /// When the true pairing aligns far better than any shuffle, the loss
    /// approaches zero; temperature rescales how sharply.
    #[test]
    fn well_aligned_pairs_beat_shuffles() {
        let tape = Tape::new();
        let n = 5;
        let d = 3;
        // rows point in distinct directions; the identity pairing is perfect
        let mut vals = Vec::new();
        for i in 0..n {
            let angle = i as f64 * 0.6;
            vals.extend_from_slice(&[angle.cos(), angle.sin(), 0.2]);
        }
        let s_a = rows(&tape, &vals, n, d);
        let s_p = rows(&tape, &vals, n, d);
        let negs = shuffled_negatives(n, 8, 3).unwrap();
        let out = align_infonce(
            &tape,
            &s_a,
            &s_p,
            &negs,
            0.1,
            DtwMode::NegatedCost,
            TieRule::default(),
        )
        .unwrap();
        // identity pairing scores 0 (perfect alignment), shuffles below
        assert!(out.positive.distance.abs() < 1e-9);
        for d in &out.negative_distances {
            assert!(*d < out.positive.distance + 1e-12);
        }
        assert!(out.loss.item().unwrap() < 9.0f64.ln());
    }

    #[test]
    fn loss_gradient_matches_central_differences() {
        let negs = vec![vec![2, 0, 1], vec![1, 2, 0]];
        let point = vec![
            vec![0.9, 0.1, 0.2, 0.8, 0.3, 0.5, 0.7, -0.2, 0.4],
            vec![0.8, 0.2, 0.1, 0.6, 0.4, 0.6, 0.5, -0.1, 0.6],
        ];
        for mode in [DtwMode::MinSimilarity, DtwMode::NegatedCost] {
            let report = crate::autodiff::grad_check(
                &point,
                |bufs, want| {
                    let tape = Tape::new();
                    let s_a = tape.leaf(bufs[0].clone(), &[3, 3])?;
                    let s_p = tape.leaf(bufs[1].clone(), &[3, 3])?;
                    let out = align_infonce(
                        &tape,
                        &s_a,
                        &s_p,
                        &negs,
                        0.7,
                        mode,
                        TieRule::default(),
                    )?;
                    let value = out.loss.item()?;
                    let grads = want
                        .then(|| -> Result<Vec<Vec<f64>>> {
                            let g = tape.backward(&out.loss)?;
                            Ok(vec![
                                g.wrt(&s_a).unwrap().to_vec(),
                                g.wrt(&s_p).unwrap().to_vec(),
                            ])
                        })
                        .transpose()?;
                    Ok((value, grads))
                },
                1e-6,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-5, "{mode:?}: {:?}", report);
        }
    }

    #[test]
    fn rejects_bad_negative_lengths_and_temperatures() {
        let tape = Tape::new();
        let s = rows(&tape, &[0.1, 0.2, 0.3, 0.4], 2, 2);
        let bad = vec![vec![0usize, 1, 2]];
        assert!(align_infonce(
            &tape,
            &s,
            &s,
            &bad,
            1.0,
            DtwMode::MinSimilarity,
            TieRule::default()
        )
        .is_err());
        let swap = vec![vec![1usize, 0]];
        assert!(align_infonce(
            &tape,
            &s,
            &s,
            &swap,
            0.0,
            DtwMode::MinSimilarity,
            TieRule::default()
        )
        .is_err());
        let tie = TieRule([Step::Diag, Step::Diag, Step::Left]);
        assert!(tie.validate().is_err());
    }
}
