use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl ClassificationMetrics {
    pub fn from_predictions(predicted: &[usize], gold: &[usize], classes: usize) -> Result<Self> {
        if predicted.len() != gold.len() {
            return Err(Error::invalid(format!(
                "{} predictions for {} labels",
                predicted.len(),
                gold.len()
            )));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&p, &g) in predicted.iter().zip(gold) {
            if p >= classes || g >= classes {
                return Err(Error::invalid(format!("label outside 0..{classes}")));
            }
            confusion[g][p] += 1;
        }
        let total = gold.len() as f64;
        let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
        let f1s = (0..classes).map(|c| {
            let tp = confusion[c][c] as f64;
            let predicted_c: u64 = (0..classes).map(|g| confusion[g][c]).sum();
            let gold_c: u64 = confusion[c].iter().sum();
            let denom = (predicted_c + gold_c) as f64;
            if denom == 0.0 { 0.0 } else { 2.0 * tp / denom }
        });
        Ok(Self {
            accuracy: if total == 0.0 { 0.0 } else { correct as f64 / total },
            macro_f1: f1s.sum::<f64>() / classes.max(1) as f64,
            confusion,
        })
    }
}

/// Always predicts the most frequent training label (lowest id on ties).
pub fn majority_baseline(train_labels: &[usize], dev_labels: &[usize], classes: usize) -> Result<ClassificationMetrics> {
    let mut counts = vec![0usize; classes];
    for &l in train_labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| Error::invalid(format!("label {l} outside 0..{classes}")))? += 1;
    }
    let majority = (0..classes).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    ClassificationMetrics::from_predictions(&vec![majority; dev_labels.len()], dev_labels, classes)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn accuracy_f1_and_confusion() {
        let m = ClassificationMetrics::from_predictions(&[1, 1, 0, 0, 1], &[1, 0, 0, 1, 1], 2).unwrap();
        assert_abs_diff_eq!(m.accuracy, 0.6);
        assert_eq!(m.confusion, vec![vec![1, 1], vec![1, 2]]);
        // class 0: 2*1/(2+2); class 1: 2*2/(3+3)
        assert_abs_diff_eq!(m.macro_f1, (0.5 + 2.0 / 3.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn majority_scores_half_on_balanced_data() {
        let train = [0, 1, 1, 0, 1];
        let dev: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let m = majority_baseline(&train, &dev, 2).unwrap();
        assert_abs_diff_eq!(m.accuracy, 0.5);
        assert_abs_diff_eq!(m.macro_f1, (0.0 + 2.0 * 50.0 / 150.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_and_std(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(m, 2.0);
        assert_abs_diff_eq!(s, 1.0);
        assert_eq!(mean_and_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(ClassificationMetrics::from_predictions(&[0], &[0, 1], 2).is_err());
        assert!(ClassificationMetrics::from_predictions(&[2], &[0], 2).is_err());
    }
}
