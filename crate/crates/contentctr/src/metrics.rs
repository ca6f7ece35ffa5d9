//! Ranking metrics: Kendall tau-b over prediction/label pairs and mean
//! average precision over groups. Pair counting is the plain O(n^2) loop;
//! sequences here are short enough that the asymptotically faster variants
//! would only add moving parts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pair counts behind a tau value. `t` counts pairs tied in s only, `u` pairs
/// tied in y only; pairs tied in both appear in neither.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TauCounts {
    pub p: u64,
    pub q: u64,
    pub t: u64,
    pub u: u64,
}

impl TauCounts {
    /// tau-b = (P - Q) / sqrt((P + Q + T) (P + Q + U)). Errors when either
    /// factor is zero (one input is constant).
    pub fn tau(&self) -> Result<f64> {
        let concordant_s = (self.p + self.q + self.t) as f64;
        let concordant_y = (self.p + self.q + self.u) as f64;
        if concordant_s == 0.0 || concordant_y == 0.0 {
            return Err(Error::UndefinedTau);
        }
        Ok((self.p as f64 - self.q as f64) / (concordant_s * concordant_y).sqrt())
    }
}

/// Counts concordant, discordant, and tied pairs between `s` and `y`.
pub fn tau_counts(s: &[f64], y: &[f64]) -> Result<TauCounts> {
    if s.len() != y.len() {
        return Err(Error::ShapeMismatch {
            op: "kendall_tau",
            left: vec![s.len()],
            right: vec![y.len()],
        });
    }
    if s.len() < 2 {
        return Err(Error::SequenceTooShort {
            op: "kendall_tau",
            len: s.len(),
            min: 2,
        });
    }
    if s.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "kendall_tau" });
    }
    let mut counts = TauCounts {
        p: 0,
        q: 0,
        t: 0,
        u: 0,
    };
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            let ds = s[i] - s[j];
            let dy = y[i] - y[j];
            if ds == 0.0 && dy == 0.0 {
                continue;
            } else if ds == 0.0 {
                counts.t += 1;
            } else if dy == 0.0 {
                counts.u += 1;
            } else if (ds > 0.0) == (dy > 0.0) {
                counts.p += 1;
            } else {
                counts.q += 1;
            }
        }
    }
    Ok(counts)
}

/// Kendall tau-b between `s` and `y`.
pub fn kendall_tau(s: &[f64], y: &[f64]) -> Result<f64> {
    tau_counts(s, y)?.tau()
}

/// Tau averaged over windows, skipping windows where it is undefined. Pair
/// counts are summed over the windows that contributed.
#[derive(Clone, Copy, Debug)]
pub struct WindowedTau {
    pub mean_tau: f64,
    pub counts: TauCounts,
    pub windows_used: usize,
    pub windows_skipped: usize,
}

pub fn windowed_tau<'a, I>(windows: I) -> Result<WindowedTau>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let mut total = 0.0;
    let mut counts = TauCounts {
        p: 0,
        q: 0,
        t: 0,
        u: 0,
    };
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (s, y) in windows {
        let c = tau_counts(s, y)?;
        match c.tau() {
            Ok(tau) => {
                total += tau;
                counts.p += c.p;
                counts.q += c.q;
                counts.t += c.t;
                counts.u += c.u;
                used += 1;
            }
            Err(Error::UndefinedTau) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::UndefinedTau);
    }
    Ok(WindowedTau {
        mean_tau: total / used as f64,
        counts,
        windows_used: used,
        windows_skipped: skipped,
    })
}

/// Average precision for one group: positives ranked by descending score,
/// stable so equal scores keep their original order. `None` when the group
/// has no positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Result<Option<f64>> {
    if scores.len() != positive.len() {
        return Err(Error::ShapeMismatch {
            op: "average_precision",
            left: vec![scores.len()],
            right: vec![positive.len()],
        });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "average_precision",
        });
    }
    let total_positive = positive.iter().filter(|&&b| b).count();
    if total_positive == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // sort_by is stable, so ties keep ascending original index
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if positive[idx] {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(Some(sum / total_positive as f64))
}

/// Mean average precision over groups.
#[derive(Clone, Copy, Debug)]
pub struct MapSummary {
    /// `None` when every group was skipped.
    pub map: Option<f64>,
    pub groups_used: usize,
    /// Groups without a single positive, excluded from the mean.
    pub groups_skipped: usize,
}

pub fn mean_average_precision<'a, I>(groups: I) -> Result<MapSummary>
where
    I: IntoIterator<Item = (&'a [f64], &'a [bool])>,
{
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (scores, positive) in groups {
        match average_precision(scores, positive)? {
            Some(ap) => {
                total += ap;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    Ok(MapSummary {
        map: (used > 0).then(|| total / used as f64),
        groups_used: used,
        groups_skipped: skipped,
    })
}

/// Evaluation summary serialized by the eval command. Field names are part of
/// the output contract.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    /// None when every window was skipped (tau undefined throughout).
    pub tau: Option<f64>,
    #[serde(rename = "P")]
    pub p: u64,
    #[serde(rename = "Q")]
    pub q: u64,
    #[serde(rename = "T")]
    pub t: u64,
    #[serde(rename = "U")]
    pub u: u64,
    pub map: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example_with_a_tie_in_s() {
        let c = tau_counts(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            c,
            TauCounts {
                p: 2,
                q: 0,
                t: 1,
                u: 0
            }
        );
        let tau = c.tau().unwrap();
        assert!((tau - 2.0 / 6.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_reversed_orderings() {
        let y = [0.1, 0.4, 0.7, 0.9];
        let asc = [1.0, 2.0, 3.0, 4.0];
        let desc = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau(&asc, &y).unwrap(), 1.0);
        assert_eq!(kendall_tau(&desc, &y).unwrap(), -1.0);
    }

    #[test]
    fn constant_input_is_undefined() {
        assert!(matches!(
            kendall_tau(&[0.5, 0.5, 0.5], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedTau)
        ));
        assert!(matches!(
            kendall_tau(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]),
            Err(Error::UndefinedTau)
        ));
    }

    #[test]
    fn pairs_tied_in_both_count_nowhere() {
        let c = tau_counts(&[1.0, 1.0, 2.0], &[3.0, 3.0, 5.0]).unwrap();
        assert_eq!(c.p + c.q + c.t + c.u, 2); // (0,2) and (1,2) only
        assert_eq!(c.p, 2);
    }

    #[test]
    fn windowed_tau_skips_undefined_windows() {
        let w1: (&[f64], &[f64]) = (&[1.0, 2.0], &[0.1, 0.9]);
        let w2: (&[f64], &[f64]) = (&[0.5, 0.5], &[0.1, 0.9]); // undefined
        let w3: (&[f64], &[f64]) = (&[2.0, 1.0], &[0.1, 0.9]);
        let out = windowed_tau(vec![w1, w2, w3]).unwrap();
        assert_eq!(out.windows_used, 2);
        assert_eq!(out.windows_skipped, 1);
        assert_eq!(out.mean_tau, 0.0); // (+1 - 1) / 2
    }

    #[test]
    fn ap_single_positive_ranked_second() {
        let ap = average_precision(&[0.9, 0.4], &[false, true])
            .unwrap()
            .unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn ap_all_positive_is_one() {
        let ap = average_precision(&[0.2, 0.9, 0.5], &[true, true, true])
            .unwrap()
            .unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn ap_ties_resolve_by_original_order() {
        // scores tied: stable sort keeps index order, so the positive at
        // index 0 outranks the negative at index 1
        let ap = average_precision(&[0.5, 0.5], &[true, false])
            .unwrap()
            .unwrap();
        assert_eq!(ap, 1.0);
        let ap = average_precision(&[0.5, 0.5], &[false, true])
            .unwrap()
            .unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn map_skips_groups_without_positives() {
        let g1 = (vec![0.9, 0.1], vec![true, false]);
        let g2 = (vec![0.9, 0.1], vec![false, false]);
        let groups = [g1, g2];
        let out = mean_average_precision(
            groups.iter().map(|(s, p)| (s.as_slice(), p.as_slice())),
        )
        .unwrap();
        assert_eq!(out.map, Some(1.0));
        assert_eq!(out.groups_used, 1);
        assert_eq!(out.groups_skipped, 1);
    }

    #[test]
    fn report_serializes_with_exact_field_names() {
        let report = MetricsReport {
            tau: Some(0.5),
            p: 1,
            q: 2,
            t: 3,
            u: 4,
            map: None,
        };
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(
            json,
            r#"{"tau":0.5,"P":1,"Q":2,"T":3,"U":4,"map":null}"#
        );
    }

    proptest! {
        #[test]
        fn tau_stays_in_unit_interval(
            pairs in prop::collection::vec((0u8..8, 0u8..8), 2..40)
        ) {
            let s: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            if let Ok(tau) = kendall_tau(&s, &y) {
                prop_assert!((-1.0..=1.0).contains(&tau));
            }
        }

        #[test]
        fn tau_of_self_is_one(v in prop::collection::hash_set(0i32..1000, 2..30)) {
            let s: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            prop_assert_eq!(kendall_tau(&s, &s).unwrap(), 1.0);
        }

        #[test]
        fn negating_s_negates_tau(
            pairs in prop::collection::vec((0u8..8, 0u8..8), 2..40)
        ) {
            let s: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let neg: Vec<f64> = s.iter().map(|x| -x).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            if let (Ok(a), Ok(b)) = (kendall_tau(&s, &y), kendall_tau(&neg, &y)) {
                prop_assert!((a + b).abs() < 1e-12);
            }
        }

        #[test]
        fn ap_lies_in_unit_interval(
            items in prop::collection::vec((any::<bool>(), 0.0f64..1.0), 1..30)
        ) {
            let scores: Vec<f64> = items.iter().map(|i| i.1).collect();
            let pos: Vec<bool> = items.iter().map(|i| i.0).collect();
            if let Some(ap) = average_precision(&scores, &pos).unwrap() {
                prop_assert!(ap > 0.0 && ap <= 1.0);
            }
        }
    }
}
