//! Evaluation metrics.

use crate::error::{Error, Result};

/// Area under the ROC curve for scores where higher means "positive".
///
/// Computed as the Mann-Whitney statistic over all positive/negative pairs,
/// ties counting one half.
pub fn auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::Empty("AUC class"));
    }
    if positive.iter().chain(negative).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("AUC score".into()));
    }
    let mut neg = negative.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &p in positive {
        let below = neg.partition_point(|&n| n < p);
        let tied = neg[below..].partition_point(|&n| n == p);
        wins += below as f64 + 0.5 * tied as f64;
    }
    Ok(wins / (positive.len() as f64 * negative.len() as f64))
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(p: &[f64], n: &[f64]) -> f64 {
        let mut s = 0.0;
        for &a in p {
            for &b in n {
                s += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (p.len() * n.len()) as f64
    }

    #[test]
    fn examples() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1], &[0.9]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5], &[0.5]).unwrap(), 0.5);
        assert!((auc(&[0.3, 0.7], &[0.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!(auc(&[], &[0.1]).is_err());
        assert!(auc(&[f64::NAN], &[0.1]).is_err());
        assert_eq!(mean(&[]), None);
    }

    proptest! {
        #[test]
        fn matches_pairwise_count(
            p in prop::collection::vec(0u8..10, 1..30),
            n in prop::collection::vec(0u8..10, 1..30),
        ) {
            let p: Vec<f64> = p.into_iter().map(f64::from).collect();
            let n: Vec<f64> = n.into_iter().map(f64::from).collect();
            prop_assert!((auc(&p, &n).unwrap() - brute(&p, &n)).abs() < 1e-12);
            prop_assert!((auc(&p, &n).unwrap() + auc(&n, &p).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
