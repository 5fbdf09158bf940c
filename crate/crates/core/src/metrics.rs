//! Binary detection metrics with ID as the positive class.
//!
//! Conventions:
//! - AUROC is the Mann–Whitney statistic with ties counted one half.
//! - FPR at a TPR target uses thresholds drawn from the observed ID scores,
//!   compares with `>=`, and never interpolates.
//! - AUPR is a step-wise sum of precision over recall increments, with tied
//!   scores entering the sweep as one block.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TPR_TARGET: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positive {
    Id,
    Ood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub auroc: f64,
    pub fpr_at_95tpr: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

impl MetricsSummary {
    pub fn compute(id_scores: &[f64], ood_scores: &[f64]) -> Result<Self> {
        Ok(Self {
            auroc: auroc(id_scores, ood_scores)?,
            fpr_at_95tpr: fpr_at_tpr(id_scores, ood_scores, DEFAULT_TPR_TARGET)?,
            aupr_in: aupr(id_scores, ood_scores, Positive::Id)?,
            aupr_out: aupr(id_scores, ood_scores, Positive::Ood)?,
            n_id: id_scores.len(),
            n_ood: ood_scores.len(),
        })
    }
}

fn check(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::EmptyInput);
    }
    if id.iter().chain(ood).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("score".into()));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Number of elements of ascending `s` strictly below / at most `x`.
fn rank_bounds(s: &[f64], x: f64) -> (usize, usize) {
    let below = s.partition_point(|&v| v < x);
    let at_most = s.partition_point(|&v| v <= x);
    (below, at_most)
}

/// Probability that a random ID score exceeds a random OOD score, ties
/// counted one half.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check(id_scores, ood_scores)?;
    let ood = sorted(ood_scores);
    // doubled win count: 2 per win, 1 per tie, exact in integers
    let mut twice_wins: u128 = 0;
    for &x in id_scores {
        let (below, at_most) = rank_bounds(&ood, x);
        twice_wins += 2 * below as u128 + (at_most - below) as u128;
    }
    let pairs = 2 * id_scores.len() as u128 * ood_scores.len() as u128;
    Ok(twice_wins as f64 / pairs as f64)
}

/// False-positive rate at the largest ID-score threshold whose TPR reaches
/// `tpr_target`.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr_target: f64) -> Result<f64> {
    check(id_scores, ood_scores)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::Config(format!("TPR target {tpr_target} outside (0, 1]")));
    }
    let mut id = sorted(id_scores);
    id.reverse();
    let n_id = id.len() as f64;
    let mut threshold = id[id.len() - 1];
    let mut i = 0;
    while i < id.len() {
        let t = id[i];
        // include every ID score tied with t
        while i < id.len() && id[i] == t {
            i += 1;
        }
        if i as f64 / n_id >= tpr_target {
            threshold = t;
            break;
        }
    }
    let ood = sorted(ood_scores);
    let accepted = ood.len() - ood.partition_point(|&v| v < threshold);
    Ok(accepted as f64 / ood.len() as f64)
}

/// Step-wise area under the precision–recall curve.
pub fn aupr(id_scores: &[f64], ood_scores: &[f64], positive: Positive) -> Result<f64> {
    check(id_scores, ood_scores)?;
    let mut tagged: Vec<(f64, bool)> = match positive {
        Positive::Id => id_scores
            .iter()
            .map(|&s| (s, true))
            .chain(ood_scores.iter().map(|&s| (s, false)))
            .collect(),
        Positive::Ood => id_scores
            .iter()
            .map(|&s| (-s, false))
            .chain(ood_scores.iter().map(|&s| (-s, true)))
            .collect(),
    };
    let n_pos = tagged.iter().filter(|t| t.1).count() as f64;
    tagged.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < tagged.len() {
        let s = tagged[i].0;
        let tp_before = tp;
        while i < tagged.len() && tagged[i].0 == s {
            if tagged[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp > tp_before {
            let precision = tp as f64 / (tp + fp) as f64;
            area += (tp - tp_before) as f64 / n_pos * precision;
        }
    }
    Ok(area)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[2.0, 0.0], &[1.0]).unwrap(), 0.5);
    }

    #[test]
    fn fpr_examples() {
        let id: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(fpr_at_tpr(&id, &[0.0, 3.0], 0.95).unwrap(), 0.5);
        assert_eq!(fpr_at_tpr(&id, &[-1.0, 0.5], 0.3).unwrap(), 0.0);
        assert_eq!(fpr_at_tpr(&id, &[-1.0, 0.5], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn fpr_on_identical_multisets_equals_achieved_tpr() {
        let s = [0.1, 0.5, 0.5, 0.7, 0.9, 0.9, 0.9, 1.3];
        let fpr = fpr_at_tpr(&s, &s, 0.95).unwrap();
        // the only threshold reaching 95% is the minimum, where TPR = 1
        assert_eq!(fpr, 1.0);
        let fpr = fpr_at_tpr(&s, &s, 0.5).unwrap();
        // threshold 0.9 accepts 4/8 of either set
        assert_eq!(fpr, 0.5);
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&[2.0, 3.0], &[0.0, 1.0], Positive::Id).unwrap(), 1.0);
        assert_eq!(aupr(&[2.0, 3.0], &[0.0, 1.0], Positive::Ood).unwrap(), 1.0);
        let same = aupr(&[1.0; 3], &[1.0; 5], Positive::Id).unwrap();
        assert!((same - 3.0 / 8.0).abs() < 1e-15);
        let same_out = aupr(&[1.0; 3], &[1.0; 5], Positive::Ood).unwrap();
        assert!((same_out - 5.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn empty_and_non_finite_inputs() {
        assert!(matches!(auroc(&[], &[1.0]), Err(Error::EmptyInput)));
        assert!(matches!(fpr_at_tpr(&[1.0], &[], 0.95), Err(Error::EmptyInput)));
        assert!(matches!(aupr(&[], &[], Positive::Id), Err(Error::EmptyInput)));
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
        assert!(fpr_at_tpr(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn summary_fields() {
        let m = MetricsSummary::compute(&[2.0, 3.0], &[0.0, 1.0]).unwrap();
        assert_eq!(m.auroc, 1.0);
        assert_eq!(m.fpr_at_95tpr, 0.0);
        assert_eq!((m.n_id, m.n_ood), (2, 2));
    }
}
