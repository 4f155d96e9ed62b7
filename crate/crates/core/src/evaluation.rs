//! Classification and misclassification-detection metrics.
//!
//! Metrics are fractions internally; [`MetricsReport`] converts to percent.

use serde::{Deserialize, Serialize};

use crate::uncertainty::UncertaintyScore;
use crate::{Error, Result};

/// Above this many records AUC switches from pair counting to the rank method.
pub const PAIR_COUNTING_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub doc_id: u64,
    pub true_label: usize,
    pub predicted_label: usize,
    pub confidence: f64,
    pub uncertainty: UncertaintyScore,
}

impl EvaluationRecord {
    pub fn is_correct(&self) -> bool {
        self.true_label == self.predicted_label
    }
}

/// Micro-averaged F1. With exactly one predicted and one true label per
/// record every error is one false positive and one false negative, so the
/// value equals accuracy.
pub fn micro_f1(records: &[EvaluationRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("micro F1 of an empty record set"));
    }
    let tp = records.iter().filter(|r| r.is_correct()).count();
    let fp = records.len() - tp;
    let fn_ = fp;
    let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
    debug_assert_eq!(f1, tp as f64 / records.len() as f64);
    Ok(f1)
}

fn split_confidences(records: &[EvaluationRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    if records.iter().any(|r| !r.confidence.is_finite()) {
        return Err(Error::NonFinite("confidence"));
    }
    let (correct, wrong): (Vec<_>, Vec<_>) = records.iter().partition(|r| r.is_correct());
    Ok((
        correct.iter().map(|r| r.confidence).collect(),
        wrong.iter().map(|r| r.confidence).collect(),
    ))
}

/// AUC-ROC of confidence for separating correct (positive) from misclassified
/// (negative) records; ties count one half.
pub fn auc_roc_misclassification(records: &[EvaluationRecord]) -> Result<f64> {
    let (pos, neg) = split_confidences(records)?;
    if records.len() <= PAIR_COUNTING_LIMIT {
        auc_pair_counting(&pos, &neg)
    } else {
        auc_rank(&pos, &neg)
    }
}

fn check_groups(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::AucUndefined);
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("AUC scores"));
    }
    Ok(())
}

fn auc_from_twice_u(twice_u: u128, pos: usize, neg: usize) -> f64 {
    twice_u as f64 / (2 * pos as u128 * neg as u128) as f64
}

/// `P(pos > neg) + ½ P(pos = neg)` by comparing every pair.
pub fn auc_pair_counting(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_groups(pos, neg)?;
    let mut twice_u: u128 = 0;
    for p in pos {
        for q in neg {
            twice_u += match p.partial_cmp(q) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    Ok(auc_from_twice_u(twice_u, pos.len(), neg.len()))
}

/// Mann–Whitney U from mid-ranks, `O(n log n)`. Exactly equal to
/// [`auc_pair_counting`]: both compute `2U` in integers.
pub fn auc_rank(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_groups(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&v| (v, true))
        .chain(neg.iter().map(|&v| (v, false)))
        .collect();
    // -0.0 and 0.0 must tie, as they do under `partial_cmp`.
    all.iter_mut().for_each(|(v, _)| *v += 0.0);
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the rank sum of positives; ranks are 1-based, ties share the mid-rank.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start + 1;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        let positives = all[start..end].iter().filter(|e| e.1).count() as u128;
        twice_rank_sum += positives * (start as u128 + 1 + end as u128);
        start = end;
    }
    let n_pos = pos.len() as u128;
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(auc_from_twice_u(twice_u, pos.len(), neg.len()))
}

/// Mean confidence of misclassified and correct records, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceStats {
    pub mean_conf_mis: f64,
    pub mean_conf_suc: f64,
    pub range: f64,
}

pub fn confidence_stats(records: &[EvaluationRecord]) -> Result<ConfidenceStats> {
    let (suc, mis) = split_confidences(records)?;
    if suc.is_empty() || mis.is_empty() {
        return Err(Error::invalid(
            "confidence statistics need at least one correct and one misclassified record",
        ));
    }
    let mean = |v: &[f64]| 100.0 * v.iter().sum::<f64>() / v.len() as f64;
    let (mean_conf_mis, mean_conf_suc) = (mean(&mis), mean(&suc));
    Ok(ConfidenceStats {
        mean_conf_mis,
        mean_conf_suc,
        range: mean_conf_suc - mean_conf_mis,
    })
}

/// Per-run metrics in percent, rounded to two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1: f64,
    pub auc_roc: f64,
    pub mean_conf_mis: f64,
    pub mean_conf_suc: f64,
    pub range: f64,
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl MetricsReport {
    pub fn from_records(records: &[EvaluationRecord]) -> Result<Self> {
        let stats = confidence_stats(records)?;
        Ok(Self {
            f1: round2(100.0 * micro_f1(records)?),
            auc_roc: round2(100.0 * auc_roc_misclassification(records)?),
            mean_conf_mis: round2(stats.mean_conf_mis),
            mean_conf_suc: round2(stats.mean_conf_suc),
            range: round2(stats.range),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::ScoreFunction;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rec(id: u64, truth: usize, pred: usize, conf: f64) -> EvaluationRecord {
        EvaluationRecord {
            doc_id: id,
            true_label: truth,
            predicted_label: pred,
            confidence: conf,
            uncertainty: UncertaintyScore {
                value: 1.0 - conf,
                function: ScoreFunction::Lc,
            },
        }
    }

    fn with_conf(correct: &[f64], wrong: &[f64]) -> Vec<EvaluationRecord> {
        let mut out: Vec<_> = correct.iter().map(|&c| rec(0, 0, 0, c)).collect();
        out.extend(wrong.iter().map(|&c| rec(0, 0, 1, c)));
        out.iter_mut().enumerate().for_each(|(i, r)| r.doc_id = i as u64);
        out
    }

    #[test]
    fn micro_f1_examples() {
        let all_right: Vec<_> = (0..4).map(|i| rec(i, 1, 1, 0.9)).collect();
        assert_eq!(micro_f1(&all_right).unwrap(), 1.0);
        let mixed: Vec<_> = [(1, 1), (0, 1), (0, 0), (0, 0)]
            .iter()
            .enumerate()
            .map(|(i, &(t, p))| rec(i as u64, t, p, 0.5))
            .collect();
        assert_eq!(micro_f1(&mixed).unwrap(), 0.75);
        let all_wrong: Vec<_> = (0..3).map(|i| rec(i, 0, 1, 0.9)).collect();
        assert_eq!(micro_f1(&all_wrong).unwrap(), 0.0);
        assert!(micro_f1(&[]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc_misclassification(&with_conf(&[0.9, 0.8], &[0.7])).unwrap(), 1.0);
        assert_eq!(auc_roc_misclassification(&with_conf(&[0.9, 0.6], &[0.7])).unwrap(), 0.5);
        assert_eq!(auc_roc_misclassification(&with_conf(&[0.8], &[0.8])).unwrap(), 0.5);
        let err = auc_roc_misclassification(&with_conf(&[0.8, 0.9], &[])).unwrap_err();
        assert!(err.to_string().starts_with("AUC undefined"));
    }

    #[test]
    fn confidence_stats_examples() {
        let s = confidence_stats(&with_conf(&[0.98, 0.96], &[0.85])).unwrap();
        assert_abs_diff_eq!(s.mean_conf_mis, 85.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.mean_conf_suc, 97.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.range, 12.0, epsilon = 1e-9);

        let s = confidence_stats(&with_conf(&[0.7, 0.7], &[0.7])).unwrap();
        assert_eq!(s.range, 0.0);

        let s = confidence_stats(&with_conf(&[1.0], &[0.0])).unwrap();
        assert_eq!(s.range, 100.0);
        assert!(confidence_stats(&with_conf(&[1.0], &[])).is_err());
    }

    #[test]
    fn metrics_report_json_shape() {
        let r = MetricsReport::from_records(&with_conf(&[0.98, 0.96], &[0.85])).unwrap();
        let json = serde_json::to_value(r).unwrap();
        assert_eq!(json["f1"], 66.67);
        assert_eq!(json["auc_roc"], 100.0);
        assert_eq!(json["range"], 12.0);
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        // Coarse grid so ties are frequent.
        proptest::collection::vec((0u32..20).prop_map(|v| v as f64 / 20.0), 1..100)
    }

    proptest! {
        #[test]
        fn rank_equals_pair_counting(pos in scores(), neg in scores()) {
            prop_assert_eq!(auc_rank(&pos, &neg).unwrap(), auc_pair_counting(&pos, &neg).unwrap());
        }

        #[test]
        fn auc_invariant_under_monotone_transform(pos in scores(), neg in scores()) {
            let f = |v: &f64| (3.0 * v).exp() - 1.0;
            let tp: Vec<f64> = pos.iter().map(f).collect();
            let tn: Vec<f64> = neg.iter().map(f).collect();
            prop_assert_eq!(auc_rank(&pos, &neg).unwrap(), auc_rank(&tp, &tn).unwrap());
        }

        #[test]
        fn f1_is_accuracy_and_label_permutation_invariant(
            pairs in proptest::collection::vec((0usize..4, 0usize..4, 0.0f64..1.0), 1..60)
        ) {
            let records: Vec<_> = pairs.iter().enumerate()
                .map(|(i, &(t, p, c))| rec(i as u64, t, p, c)).collect();
            let correct = records.iter().filter(|r| r.is_correct()).count();
            prop_assert_eq!(micro_f1(&records).unwrap(), correct as f64 / records.len() as f64);

            let perm = [2usize, 0, 3, 1];
            let relabeled: Vec<_> = records.iter().map(|r| EvaluationRecord {
                true_label: perm[r.true_label],
                predicted_label: perm[r.predicted_label],
                ..r.clone()
            }).collect();
            prop_assert_eq!(micro_f1(&records).unwrap(), micro_f1(&relabeled).unwrap());
            prop_assert_eq!(
                auc_roc_misclassification(&records).ok(),
                auc_roc_misclassification(&relabeled).ok()
            );
        }
    }
}
