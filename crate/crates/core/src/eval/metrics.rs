//! Confusion matrices and Macro F1.

use crate::dataio::N_CLASSES;
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_pairs(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= N_CLASSES || p >= N_CLASSES {
                return Err(Error::Data(format!("class pair ({t}, {p}) out of range")));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..N_CLASSES).map(|c| self.counts[c][c]).sum();
        diag as f64 / self.total().max(1) as f64
    }

    /// F1 per class. A zero denominator (no true positives possible or found) counts
    /// as F1 = 0, including classes absent from both truth and predictions.
    pub fn per_class_f1(&self) -> [f64; N_CLASSES] {
        let mut out = [0.0; N_CLASSES];
        for (c, f1) in out.iter_mut().enumerate() {
            let tp = self.counts[c][c] as f64;
            let predicted: u64 = (0..N_CLASSES).map(|r| self.counts[r][c]).sum();
            let actual: u64 = self.counts[c].iter().sum();
            let precision = if predicted == 0 {
                0.0
            } else {
                tp / predicted as f64
            };
            let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
            *f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
        }
        out
    }
}

/// Unweighted mean of the per-class F1 scores over all eight classes.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::Data("macro F1 of an empty confusion matrix".into()));
    }
    Ok(cm.per_class_f1().iter().sum::<f64>() / N_CLASSES as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_diagonal() {
        let labels: Vec<usize> = (0..40).map(|i| i % 8).collect();
        let cm = ConfusionMatrix::from_pairs(&labels, &labels).unwrap();
        assert_eq!(macro_f1(&cm).unwrap(), 1.0);
    }

    #[test]
    fn constant_prediction_on_balanced_set() {
        let labels: Vec<usize> = (0..80).map(|i| i % 8).collect();
        let preds = vec![3; 80];
        let cm = ConfusionMatrix::from_pairs(&labels, &preds).unwrap();
        // class 3: precision 1/8, recall 1, F1 = 2/9; the rest 0
        let expected = (2.0 / 9.0) / 8.0;
        assert!((macro_f1(&cm).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.027_777_777_777_777_78).abs() < 1e-15);
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert!(macro_f1(&ConfusionMatrix::default()).is_err());
    }
}
