//! Classification metrics.

use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann-Whitney statistic; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!("auc: {} scores for {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("auc is undefined when only one class is present".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie blocks
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] > 0.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of samples with `sign(score) == label` (a zero score predicts +1).
pub fn accuracy(scores: &[f64], labels: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let hits = scores.iter().zip(labels).filter(|(&s, &y)| predicted_label(s) == y).count();
    hits as f64 / scores.len() as f64
}

#[inline]
pub fn predicted_label(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auc_extremes() {
        let y = [-1.0, -1.0, 1.0, 1.0];
        assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &y).unwrap(), 1.0);
        assert_eq!(auc(&[0.4, 0.3, 0.2, 0.1], &y).unwrap(), 0.0);
        assert_eq!(auc(&[1.0; 4], &y).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn auc_matches_pair_count() {
        let s = [0.3, 0.1, 0.3, 0.8, 0.5, 0.1];
        let y = [1.0, -1.0, -1.0, 1.0, -1.0, 1.0];
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if y[i] > 0.0 && y[j] < 0.0 {
                    den += 1.0;
                    num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((auc(&s, &y).unwrap() - num / den).abs() < 1e-15);
    }

    #[test]
    fn accuracy_counts_signs() {
        assert_eq!(accuracy(&[1.0, -2.0, 0.0, -0.1], &[1.0, -1.0, 1.0, 1.0]), 0.75);
    }

    proptest! {
        #[test]
        fn auc_negation_complements(pairs in prop::collection::vec((-1e3f64..1e3, any::<bool>()), 2..40)) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<f64> = pairs.iter().map(|p| if p.1 { 1.0 } else { -1.0 }).collect();
            let mut uniq = scores.clone();
            uniq.sort_by(f64::total_cmp);
            uniq.dedup();
            prop_assume!(uniq.len() == scores.len());
            prop_assume!(labels.iter().any(|&y| y > 0.0) && labels.iter().any(|&y| y < 0.0));
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let a = auc(&scores, &labels).unwrap();
            let b = auc(&neg, &labels).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }
}
