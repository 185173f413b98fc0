//! Ranking and likelihood metrics for binary predictions.

use crate::diff::ops::bce_value;
use crate::error::{Error, Result};

/// Scores paired with 0/1 labels.
#[derive(Clone, Copy, Debug)]
pub struct ScoredSet<'a> {
    pub scores: &'a [f64],
    pub labels: &'a [f64],
}

impl<'a> ScoredSet<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [f64]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::contract(format!("{} scores vs {} labels", scores.len(), labels.len())));
        }
        if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::contract(format!("label {y} is not 0 or 1")));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::contract("NaN score"));
        }
        Ok(ScoredSet { scores, labels })
    }

    fn class_counts(&self) -> Result<(usize, usize)> {
        let pos = self.labels.iter().filter(|&&y| y == 1.0).count();
        let neg = self.labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::MetricUndefined(format!(
                "AUC needs both classes, got {pos} positive and {neg} negative"
            )));
        }
        Ok((pos, neg))
    }
}

/// Area under the ROC curve via the Mann–Whitney rank sum, ties at mean rank.
pub fn auc(set: &ScoredSet<'_>) -> Result<f64> {
    let (pos, neg) = set.class_counts()?;
    let n = set.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));

    // Sum ranks in twice-scaled integers so tied mean ranks stay exact.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && set.scores[order[j]] == set.scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share mean (i + 1 + j) / 2.
        let doubled_mean = (i + 1 + j) as u128;
        let tied_pos = order[i..j].iter().filter(|&&k| set.labels[k] == 1.0).count() as u128;
        doubled_rank_sum += doubled_mean * tied_pos;
        i = j;
    }
    let p = pos as u128;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Quadratic pairwise AUC: fraction of (positive, negative) pairs ordered
/// correctly, ties counting half.
pub fn auc_bruteforce(set: &ScoredSet<'_>) -> Result<f64> {
    let (pos, neg) = set.class_counts()?;
    let mut doubled: u128 = 0;
    for (i, &si) in set.scores.iter().enumerate() {
        if set.labels[i] != 1.0 {
            continue;
        }
        for (j, &sj) in set.scores.iter().enumerate() {
            if set.labels[j] != 0.0 {
                continue;
            }
            if si > sj {
                doubled += 2;
            } else if si == sj {
                doubled += 1;
            }
        }
    }
    Ok(doubled as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Mean clamped negative log-likelihood; the training loss applied to a scored set.
pub fn logloss(set: &ScoredSet<'_>) -> Result<f64> {
    bce_value(set.scores, set.labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Rng;
    use proptest::prelude::*;

    fn set<'a>(s: &'a [f64], y: &'a [f64]) -> ScoredSet<'a> {
        ScoredSet::new(s, y).unwrap()
    }

    #[test]
    fn reference_example() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let y = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(auc(&set(&s, &y)).unwrap(), 0.75);
        assert_eq!(auc_bruteforce(&set(&s, &y)).unwrap(), 0.75);
    }

    #[test]
    fn ties_and_perfect_order() {
        let y = [0.0, 1.0, 0.0, 1.0, 1.0];
        assert_eq!(auc(&set(&[0.3; 5], &y)).unwrap(), 0.5);
        assert_eq!(auc(&set(&[0.0, 0.9, 0.1, 0.8, 0.7], &y)).unwrap(), 1.0);
        assert_eq!(auc_bruteforce(&set(&[0.2, 0.9], &[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(auc_bruteforce(&set(&[0.5, 0.5], &[0.0, 1.0])).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        let err = auc(&set(&[0.1, 0.2], &[1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::MetricUndefined(_)));
        assert!(matches!(auc_bruteforce(&set(&[0.1], &[0.0])), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn rank_formula_equals_pairwise_on_tied_instances() {
        let mut rng = Rng::stream(77, "auc-equiv");
        for _ in 0..1000 {
            let n = 2 + rng.below(60);
            let levels = 1 + rng.below(8);
            let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
            let mut labels: Vec<f64> = (0..n).map(|_| (rng.uniform() < 0.5) as u8 as f64).collect();
            labels[0] = 0.0;
            labels[1] = 1.0;
            let s = set(&scores, &labels);
            assert!((auc(&s).unwrap() - auc_bruteforce(&s).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn logloss_values() {
        let l = logloss(&set(&[0.5], &[1.0])).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-6);
        assert!(logloss(&set(&[1e-12], &[0.0])).unwrap() < 1e-6);
        let s = [0.2, 0.7, 0.9];
        let y = [0.0, 1.0, 0.0];
        assert_eq!(logloss(&set(&s, &y)).unwrap().to_bits(), bce_value(&s, &y).unwrap().to_bits());
    }

    proptest! {
        #[test]
        fn auc_invariant_under_increasing_transform(
            raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..80)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 20.0).collect();
            let mut labels: Vec<f64> = raw.iter().map(|(_, y)| *y as u8 as f64).collect();
            labels[0] = 0.0;
            labels[1] = 1.0;
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            let a = auc(&set(&scores, &labels)).unwrap();
            let b = auc(&set(&transformed, &labels)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn negated_scores_complement_without_ties(
            raw in proptest::collection::vec(any::<bool>(), 2..80)
        ) {
            let scores: Vec<f64> = (0..raw.len()).map(|i| (i as f64 * 0.618_033_988_7).fract()).collect();
            let mut labels: Vec<f64> = raw.iter().map(|y| *y as u8 as f64).collect();
            labels[0] = 0.0;
            labels[1] = 1.0;
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let total = auc(&set(&scores, &labels)).unwrap() + auc(&set(&neg, &labels)).unwrap();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}
