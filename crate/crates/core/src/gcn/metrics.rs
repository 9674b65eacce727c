//! Accuracy, macro-F1 and rank-statistic AUC for the two-class problem.

use serde::{Deserialize, Serialize};

/// Decision threshold on `P(fake)`.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub n_samples: usize,
}

fn predicted(score: f64) -> bool {
    score >= DECISION_THRESHOLD
}

pub fn accuracy(scores: &[f64], labels: &[bool]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| predicted(s) == y)
        .count();
    hits as f64 / scores.len() as f64
}

/// Unweighted mean of per-class F1; a class with no true or predicted members scores 0.
pub fn macro_f1(scores: &[f64], labels: &[bool]) -> f64 {
    let f1 = |class: bool| {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&s, &y) in scores.iter().zip(labels) {
            match (predicted(s) == class, y == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    0.5 * (f1(false) + f1(true))
}

/// Mann–Whitney AUC from average ranks; tied scores share their mean rank.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y)
        .map(|(r, _)| r)
        .sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

pub fn compute(scores: &[f64], labels: &[bool]) -> Metrics {
    Metrics {
        accuracy: accuracy(scores, labels),
        macro_f1: macro_f1(scores, labels),
        auc: auc(scores, labels),
        n_samples: scores.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi && !yj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn separable_scores() {
        let s = [0.1, 0.2, 0.7, 0.9];
        let y = [false, false, true, true];
        assert_eq!(auc(&s, &y), Some(1.0));
    }

    #[test]
    fn constant_scores() {
        let s = [0.4; 6];
        let y = [true, false, true, false, false, true];
        assert_eq!(auc(&s, &y), Some(0.5));
    }

    #[test]
    fn four_sample_example() {
        let s = [0.9, 0.8, 0.1, 0.2];
        let y = [true, true, false, false];
        let m = compute(&s, &y);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.auc, Some(1.0));
        assert_eq!(brute_force_auc(&s, &y), 1.0);
    }

    #[test]
    fn single_class_auc_undefined() {
        assert_eq!(auc(&[0.3, 0.6], &[true, true]), None);
    }

    #[test]
    fn empty_class_f1_is_zero() {
        // everything predicted fake, half of it real
        let s = [0.9, 0.9, 0.9, 0.9];
        let y = [true, true, false, false];
        let f1_fake = 2.0 * 2.0 / (2.0 * 2.0 + 2.0);
        assert!((macro_f1(&s, &y) - 0.5 * f1_fake).abs() < 1e-15);
        assert_eq!(accuracy(&s, &y), 0.5);
    }

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(accuracy(&[0.5], &[true]), 1.0);
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(
            data in prop::collection::vec((0u8..6, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 5.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
            let got = auc(&scores, &labels);
            if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
                prop_assert!(got.is_none());
            } else {
                let want = brute_force_auc(&scores, &labels);
                prop_assert!((got.unwrap() - want).abs() < 1e-12);
            }
        }

        #[test]
        fn metrics_in_unit_interval(
            data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
            let m = compute(&scores, &labels);
            prop_assert!((0.0..=1.0).contains(&m.accuracy));
            prop_assert!((0.0..=1.0).contains(&m.macro_f1));
            if let Some(a) = m.auc {
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }
    }
}
