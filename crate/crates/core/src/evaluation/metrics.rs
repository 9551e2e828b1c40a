use serde::Serialize;

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Empty("no scored examples".into()));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("score {bad} is not a number")));
    }
    Ok(())
}

/// Fraction of examples where `score >= threshold` agrees with the label.
pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check(scores, labels)?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| (**s >= threshold) == **l)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Area under the ROC curve from the Mann–Whitney statistic with midranks,
/// so tied scores count one half.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(format!(
            "AUC needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// `Σ_k (R_k − R_{k−1}) · P_k` over the ranking by descending score. Tied
/// scores keep their input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|l| **l).count();
    if pos == 0 {
        return Err(Error::InvalidArgument("average precision needs a positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
            ap += tp as f64 / (k + 1) as f64;
        }
    }
    Ok(ap / pos as f64)
}

/// Link-prediction metrics over a balanced positive/negative set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinkMetrics {
    pub accuracy: f64,
    pub auc: f64,
    pub ap: f64,
    pub count: usize,
}

impl LinkMetrics {
    pub fn compute(scores: &[f64], labels: &[bool]) -> Result<Self> {
        Ok(LinkMetrics {
            accuracy: accuracy(scores, labels, 0.5)?,
            auc: auc_roc(scores, labels)?,
            ap: average_precision(scores, labels)?,
            count: scores.len(),
        })
    }
}


#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.9, 0.1], &[true, false], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.9, 0.9], &[true, false], 0.5).unwrap(), 0.5);
        assert_eq!(accuracy(&[0.5, 0.5], &[true, false], 0.5).unwrap(), 0.5);
        assert!(accuracy(&[], &[], 0.5).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.3; 6], &[true, false, true, false, true, false]).unwrap(), 0.5);
        assert!(auc_roc(&[0.3, 0.4], &[true, true]).is_err());
    }

    #[test]
    fn ap_examples() {
        let s = [0.9, 0.8, 0.7, 0.6, 0.5];
        assert_eq!(average_precision(&s, &[true, false, false, false, false]).unwrap(), 1.0);
        assert!((average_precision(&s, &[false, false, false, false, true]).unwrap() - 0.2).abs() < 1e-15);
        assert!(average_precision(&s, &[false; 5]).is_err());
    }

    fn scored_set() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..200)
            .prop_flat_map(|n| {
                (
                    prop::collection::vec((0u8..20).prop_map(|x| f64::from(x) / 20.0), n),
                    prop::collection::vec(any::<bool>(), n),
                )
            })
            .prop_filter("both classes", |(_, l)| l.contains(&true) && l.contains(&false))
    }

    proptest! {
        #[test]
        fn auc_equals_pairwise_oracle((s, l) in scored_set()) {
            prop_assert_eq!(auc_roc(&s, &l).unwrap(), pairwise_auc(&s, &l));
        }

        #[test]
        fn ap_matches_curve_oracle((s, l) in scored_set()) {
            prop_assert!((average_precision(&s, &l).unwrap() - curve_ap(&s, &l)).abs() < 1e-12);
        }

        #[test]
        fn monotone_transforms_preserve_rankings((s, l) in scored_set(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
            let t: Vec<f64> = s.iter().map(|x| (a * x + b).exp()).collect();
            prop_assert_eq!(auc_roc(&s, &l).unwrap(), auc_roc(&t, &l).unwrap());
            prop_assert_eq!(average_precision(&s, &l).unwrap(), average_precision(&t, &l).unwrap());
        }

        #[test]
        fn accuracy_and_error_rate_sum_to_one((s, l) in scored_set()) {
            let acc = accuracy(&s, &l, 0.5).unwrap();
            let wrong = s.iter().zip(&l).filter(|(x, y)| (**x >= 0.5) != **y).count() as f64 / s.len() as f64;
            prop_assert!((acc + wrong - 1.0).abs() < 1e-15);
        }
    }
}
