//! Monotone path alignment between the two modality projections.
//!
//! A cosine similarity matrix D is accumulated with the classic three-way
//! recurrence C[i][j] = cell(i, j) + min(C[i-1][j-1], C[i-1][j], C[i][j-1]).
//! The backtracked argmin path makes the score differentiable: the total
//! along a fixed path is a sum of D entries, so gradients flow into exactly
//! the path cells (the subgradient of the hard min).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// What the recurrence accumulates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtwMode {
    /// Accumulate the similarity entries themselves; the score is C[n][n].
    /// The min path then routes through the weakest similarities, so raising
    /// the score means raising the worst-matched cells.
    #[default]
    MinSimilarity,
    /// Accumulate cost 1 - cos and negate the total, so a higher score still
    /// means better aligned. Cells are non-negative, which keeps the min path
    /// from collecting extra cells.
    NegatedCost,
}

/// Preference order among predecessors when accumulated values tie.
/// Diag steps to (i-1, j-1), Up to (i-1, j), Left to (i, j-1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Diag,
    Up,
    Left,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieRule(pub [Step; 3]);

impl Default for TieRule {
    fn default() -> Self {
        TieRule([Step::Diag, Step::Up, Step::Left])
    }
}

impl TieRule {
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 3];
        for step in self.0 {
            seen[step as usize] = true;
        }
        if seen != [true; 3] {
            return Err(Error::Config(format!(
                "loss.tie_rule must be a permutation of diag, up, left, got {:?}",
                self.0
            )));
        }
        Ok(())
    }
}

/// Detached byproducts of one alignment.
#[derive(Clone, Debug)]
pub struct DtwResult {
    pub n: usize,
    /// Cosine similarity matrix, row-major n x n.
    pub similarity: Vec<f64>,
    /// Accumulated matrix C of the recurrence, row-major n x n.
    pub accumulated: Vec<f64>,
    /// Monotone index pairs from (1, 1) to (n, n), 1-based.
    pub path: Vec<(usize, usize)>,
    /// Score of the alignment; equals C[n][n] in min-similarity mode and
    /// -C[n][n] in negated-cost mode.
    pub distance: f64,
}

/// An alignment plus its score as a scalar on the tape.
pub struct DtwOutput {
    pub result: DtwResult,
    pub score: Tensor,
}

/// Pairwise cosine similarities between the rows of `a` (m, d) and `b`
/// (n, d): out[i][j] = <a_i, b_j> / (|a_i| |b_j| + 1e-12). The epsilon keeps
/// zero rows finite (their similarities come out 0); a vanishing 1e-24 inside
/// the square roots keeps the gradient finite there too without moving any
/// representable norm.
pub fn cosine_similarity_matrix(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity_matrix",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (m, n) = (a.shape()[0], b.shape()[0]);
    let dots = tape.matmul(a, &tape.swap_axes(b, 0, 1)?)?;
    let norm = |x: &Tensor| -> Result<Tensor> {
        let sq = tape.mul(x, x)?;
        tape.sqrt(&tape.offset(&tape.sum(&sq, Some(1))?, 1e-24)?)
    };
    let na = tape.reshape(&norm(a)?, &[m, 1])?;
    let nb = tape.reshape(&norm(b)?, &[1, n])?;
    let denom = tape.offset(&tape.matmul(&na, &nb)?, 1e-12)?;
    tape.div(&dots, &denom)
}

/// Runs the recurrence over a square similarity matrix already on the tape
/// and returns the argmin path with a differentiable score.
pub fn dtw_align(tape: &Tape, d: &Tensor, mode: DtwMode, tie: TieRule) -> Result<DtwOutput> {
    let shape = d.shape();
    if shape.len() != 2 || shape[0] != shape[1] || shape[0] == 0 {
        return Err(Error::BadShape {
            op: "dtw_align",
            msg: "expected a non-empty square matrix".into(),
            shape: shape.to_vec(),
        });
    }
    tie.validate()?;
    let n = shape[0];
    let similarity = d.to_vec();
    if similarity.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "dtw_align" });
    }
    let cell = |i: usize, j: usize| -> f64 {
        let v = similarity[i * n + j];
        match mode {
            DtwMode::MinSimilarity => v,
            DtwMode::NegatedCost => 1.0 - v,
        }
    };

    let mut accumulated: Vec<f64> = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => accumulated[j - 1],
                (_, 0) => accumulated[(i - 1) * n],
                _ => {
                    let diag = accumulated[(i - 1) * n + (j - 1)];
                    let up = accumulated[(i - 1) * n + j];
                    let left = accumulated[i * n + (j - 1)];
                    diag.min(up).min(left)
                }
            };
            accumulated[i * n + j] = cell(i, j) + best;
        }
    }

    // Backtrack, preferring ties in rule order.
    let mut path = vec![(n - 1, n - 1)];
    let (mut i, mut j) = (n - 1, n - 1);
    while i > 0 || j > 0 {
        let candidates: [(Step, Option<(usize, usize)>); 3] = [
            (
                Step::Diag,
                (i > 0 && j > 0).then(|| (i - 1, j - 1)),
            ),
            (Step::Up, (i > 0).then(|| (i - 1, j))),
            (Step::Left, (j > 0).then(|| (i, j - 1))),
        ];
        let available = |step: Step| -> Option<(usize, usize)> {
            candidates
                .iter()
                .find(|(s, _)| *s == step)
                .and_then(|(_, c)| *c)
        };
        let mut best_value = f64::INFINITY;
        for (_, cand) in &candidates {
            if let Some((pi, pj)) = cand {
                best_value = best_value.min(accumulated[pi * n + pj]);
            }
        }
        let (pi, pj) = tie
            .0
            .iter()
            .find_map(|&step| {
                available(step).filter(|&(pi, pj)| accumulated[pi * n + pj] == best_value)
            })
            .expect("some predecessor always exists");
        path.push((pi, pj));
        i = pi;
        j = pj;
    }
    path.reverse();

    // Score = sum of D over the fixed path (offset by path length in cost
    // mode); this reproduces C[n][n] up to sign and is where gradient flows.
    let flat = tape.reshape(d, &[n * n])?;
    let cells: Vec<usize> = path.iter().map(|&(pi, pj)| pi * n + pj).collect();
    let along_path = tape.sum(&tape.gather_rows(&flat, &cells)?, None)?;
    let score = match mode {
        DtwMode::MinSimilarity => along_path,
        DtwMode::NegatedCost => tape.offset(&along_path, -(path.len() as f64))?,
    };
    let distance = score.item()?;

    Ok(DtwOutput {
        result: DtwResult {
            n,
            similarity,
            accumulated,
            path: path.iter().map(|&(pi, pj)| (pi + 1, pj + 1)).collect(),
            distance,
        },
        score,
    })
}
