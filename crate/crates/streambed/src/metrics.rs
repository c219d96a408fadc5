//! Ranking and calibration metrics for binary streams.
//!
//! AUC is computed exactly (tie-averaged rank-sum, equivalent to counting
//! concordant pairs with ties worth half), not by trapezoid approximation
//! over thresholds, so two encoders can be compared at the fourth decimal
//! without worrying about binning artifacts.

use thiserror::Error;

/// Probability clamp applied before taking logs, mirroring the training
/// loss: predictions are squeezed into `[EPS, 1 - EPS]`.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metrics need at least one example")]
    Empty,
    #[error("labels and predictions differ in length: {labels} vs {predictions}")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("AUC is undefined when only one class is present")]
    SingleClass,
    #[error("prediction at index {0} is not finite")]
    NonFinitePrediction(usize),
}

/// Evaluation summary over one scored set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub auc: f64,
    pub logloss: f64,
    pub count: usize,
}

fn validate(labels: &[bool], predictions: &[f64]) -> Result<(), MetricsError> {
    if labels.len() != predictions.len() {
        return Err(MetricsError::LengthMismatch {
            labels: labels.len(),
            predictions: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(i) = predictions.iter().position(|p| !p.is_finite()) {
        return Err(MetricsError::NonFinitePrediction(i));
    }
    Ok(())
}

/// Exact AUC by tie-averaged rank-sum.
///
/// Equal to the probability that a random positive outscores a random
/// negative, with ties counted as one half.
pub fn auc(labels: &[bool], predictions: &[f64]) -> Result<f64, MetricsError> {
    validate(labels, predictions)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }

    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_unstable_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));

    // Walk tie groups, assigning each member the group's average 1-based rank.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && predictions[order[j + 1]] == predictions[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += avg_rank * pos_in_group as f64;
        i = j + 1;
    }

    let n_pos_f = n_pos as f64;
    Ok((pos_rank_sum - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Mean binary cross-entropy with predictions clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn logloss(labels: &[bool], predictions: &[f64]) -> Result<f64, MetricsError> {
    validate(labels, predictions)?;
    let total: f64 = labels
        .iter()
        .zip(predictions)
        .map(|(&y, &p)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Computes both metrics in one call.
pub fn evaluate(labels: &[bool], predictions: &[f64]) -> Result<Metrics, MetricsError> {
    Ok(Metrics {
        auc: auc(labels, predictions)?,
        logloss: logloss(labels, predictions)?,
        count: labels.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    /// Direct pairwise definition: wins + half-ties over all pos/neg pairs.
    fn auc_pairwise(labels: &[bool], predictions: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            if !yi {
                continue;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yj {
                    continue;
                }
                den += 1.0;
                if predictions[i] > predictions[j] {
                    num += 1.0;
                } else if predictions[i] == predictions[j] {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_hand_examples() {
        // Perfect separation, inverted separation, and a worked middle case.
        let labels = [true, false, true, false];
        assert_eq!(auc(&labels, &[0.9, 0.1, 0.8, 0.2]).unwrap(), 1.0);
        assert_eq!(auc(&labels, &[0.1, 0.9, 0.2, 0.8]).unwrap(), 0.0);
        // Pairs: (0.7>0.4)=1, (0.7>0.6)=1, (0.5>0.4)=1, (0.5<0.6)=0 -> 3/4.
        assert_eq!(auc(&labels, &[0.7, 0.4, 0.5, 0.6]).unwrap(), 0.75);
    }

    #[test]
    fn auc_ties_count_half() {
        // All predictions equal: every pair is a tie, AUC = 0.5 exactly.
        let labels = [true, false, true, false, true];
        assert_eq!(auc(&labels, &[0.3; 5]).unwrap(), 0.5);
        // One tied pos/neg pair among distinct scores.
        let labels = [true, false, false];
        let preds = [0.5, 0.5, 0.1];
        // Pairs: (0.5 vs 0.5) = 0.5, (0.5 > 0.1) = 1 -> 1.5/2.
        assert_eq!(auc(&labels, &preds).unwrap(), 0.75);
    }

    #[test]
    fn rank_sum_matches_pairwise_oracle_on_random_data() {
        let mut rng = CounterRng::new(42);
        for trial in 0..30 {
            let n = 20 + trial * 7;
            let labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.4).collect();
            // Coarse grid scores force plenty of ties.
            let preds: Vec<f64> = (0..n).map(|_| (rng.next_f64() * 8.0).floor() / 8.0).collect();
            if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
                continue;
            }
            let fast = auc(&labels, &preds).unwrap();
            let slow = auc_pairwise(&labels, &preds);
            assert!(
                (fast - slow).abs() < 1e-12,
                "trial {trial}: rank-sum {fast} vs pairwise {slow}"
            );
        }
    }

    #[test]
    fn logloss_hand_values() {
        // -ln(0.8) for a confident hit, -ln(0.2) for a confident miss.
        let ll = logloss(&[true, false], &[0.8, 0.8]).unwrap();
        let expected = (-(0.8f64).ln() - (0.2f64).ln()) / 2.0;
        assert!((ll - expected).abs() < 1e-15);
        // Clamping keeps certainty from producing infinities.
        let ll = logloss(&[true], &[0.0]).unwrap();
        assert!((ll - -(PROB_EPS.ln())).abs() < 1e-9);
        assert!(ll.is_finite());
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(auc(&[], &[]), Err(MetricsError::Empty)));
        assert!(matches!(
            auc(&[true], &[0.5, 0.5]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            auc(&[true, true], &[0.5, 0.6]),
            Err(MetricsError::SingleClass)
        ));
        assert!(matches!(
            auc(&[true, false], &[f64::NAN, 0.5]),
            Err(MetricsError::NonFinitePrediction(0))
        ));
        // Logloss is defined for single-class sets even though AUC is not.
        assert!(logloss(&[true, true], &[0.5, 0.6]).is_ok());
    }

    #[test]
    fn evaluate_bundles_both() {
        let m = evaluate(&[true, false], &[0.9, 0.1]).unwrap();
        assert_eq!(m.auc, 1.0);
        assert_eq!(m.count, 2);
        assert!(m.logloss > 0.0);
    }
}
