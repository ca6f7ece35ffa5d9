//! Pairwise ranking losses. Every variant scores admitted pairs with
//! log(1 + exp(-sigma (s_i - s_j))); they differ only in which label-ordered
//! pairs are admitted. Admission reads detached prediction values, so the
//! indicator itself never routes gradient.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// Which label-ordered pairs (y_i > y_j) enter the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairVariant {
    /// Every label-ordered pair.
    All,
    /// Pairs whose predicted gap has not yet reached the label gap:
    /// (y_i - y_j) - (s_i - s_j) >= 0.
    UnderMargin,
    /// Misordered pairs only: s_i - s_j <= 0.
    Misordered,
    /// Correctly ordered pairs still short of the label gap:
    /// 0 < s_i - s_j < y_i - y_j.
    UnderSeparated,
}

impl PairVariant {
    fn admits(&self, ds: f64, dy: f64) -> bool {
        match self {
            PairVariant::All => true,
            PairVariant::UnderMargin => dy - ds >= 0.0,
            PairVariant::Misordered => ds <= 0.0,
            PairVariant::UnderSeparated => 0.0 < ds && ds < dy,
        }
    }
}

/// Label-ordered pairs admitted by `variant`, judged on detached values.
/// Returned as (i, j) index pairs with y[i] > y[j].
pub fn admitted_pairs(variant: PairVariant, s: &[f64], y: &[f64]) -> Result<Vec<(usize, usize)>> {
    if s.len() != y.len() {
        return Err(Error::ShapeMismatch {
            op: "admitted_pairs",
            left: vec![s.len()],
            right: vec![y.len()],
        });
    }
    let mut pairs = Vec::new();
    for a in 0..s.len() {
        for b in 0..s.len() {
            if y[a] > y[b] && variant.admits(s[a] - s[b], y[a] - y[b]) {
                pairs.push((a, b));
            }
        }
    }
    Ok(pairs)
}

/// Pair bookkeeping for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PairStats {
    /// Pairs with y_i > y_j across all windows.
    pub label_ordered: usize,
    /// Pairs that passed the variant's admission rule.
    pub admitted: usize,
    /// Windows that contributed no admitted pair.
    pub empty_windows: usize,
}

/// Pairwise loss over a batch of windows: per window the sum over admitted
/// pairs of log(1 + exp(-sigma (s_i - s_j))), averaged over the windows of
/// the batch. `s` is (batch, n) on the tape; `y` is row-major (batch, n).
/// Windows without admitted pairs contribute exactly zero and no gradient.
pub fn pairwise_batch_loss(
    tape: &Tape,
    s: &Tensor,
    y: &[f64],
    variant: PairVariant,
    sigma: f64,
) -> Result<(Tensor, PairStats)> {
    let shape = s.shape();
    if shape.len() != 2 {
        return Err(Error::BadShape {
            op: "pairwise_batch_loss",
            msg: "expected (batch, n)".into(),
            shape: shape.to_vec(),
        });
    }
    let (batch, n) = (shape[0], shape[1]);
    if y.len() != batch * n {
        return Err(Error::ShapeMismatch {
            op: "pairwise_batch_loss",
            left: shape.to_vec(),
            right: vec![y.len()],
        });
    }
    if n < 2 {
        return Err(Error::SequenceTooShort {
            op: "pairwise_batch_loss",
            len: n,
            min: 2,
        });
    }

    let detached = s.data();
    let mut stats = PairStats::default();
    let mut winners: Vec<usize> = Vec::new();
    let mut losers: Vec<usize> = Vec::new();
    for w in 0..batch {
        let row_s = &detached[w * n..(w + 1) * n];
        let row_y = &y[w * n..(w + 1) * n];
        for a in 0..n {
            for b in 0..n {
                if row_y[a] > row_y[b] {
                    stats.label_ordered += 1;
                    if variant.admits(row_s[a] - row_s[b], row_y[a] - row_y[b]) {
                        stats.admitted += 1;
                        winners.push(w * n + a);
                        losers.push(w * n + b);
                    }
                }
            }
        }
    }
    let mut admitted_in_window = vec![0usize; batch];
    for &idx in &winners {
        admitted_in_window[idx / n] += 1;
    }
    stats.empty_windows = admitted_in_window.iter().filter(|&&c| c == 0).count();

    if winners.is_empty() {
        return Ok((Tensor::scalar(0.0), stats));
    }

    let flat = tape.reshape(s, &[batch * n])?;
    let s_winners = tape.gather_rows(&flat, &winners)?;
    let s_losers = tape.gather_rows(&flat, &losers)?;
    let gap = tape.sub(&s_winners, &s_losers)?;
    let terms = tape.softplus(&tape.scale(&gap, -sigma)?)?;
    let total = tape.sum(&terms, None)?;
    let loss = tape.scale(&total, 1.0 / batch as f64)?;
    Ok((loss, stats))
}
