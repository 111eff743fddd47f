//! Classification metrics: accuracy, per-class and support-weighted F1,
//! confusion matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics of one test set. `confusion[t][p]` counts samples of true class
/// `t` predicted as `p`; `support[k]` is the row sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub support: Vec<u64>,
}

impl EvalReport {
    /// Builds the report from (truth, prediction) pairs over `num_classes`.
    ///
    /// A class with no true and no predicted samples has F1 = 0 and support
    /// 0, contributing nothing to the weighted average.
    pub fn from_pairs(pairs: &[(usize, usize)], num_classes: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidConfig(
                "cannot evaluate an empty test set".into(),
            ));
        }
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for &(truth, pred) in pairs {
            if truth >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: truth,
                    num_classes,
                });
            }
            if pred >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: pred,
                    num_classes,
                });
            }
            confusion[truth][pred] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    /// Derives every metric from a raw confusion matrix.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let k = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let support: Vec<u64> = confusion.iter().map(|row| row.iter().sum()).collect();
        let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let mut per_class_f1 = vec![0.0; k];
        for c in 0..k {
            let tp = confusion[c][c] as f64;
            let fp: f64 = (0..k)
                .filter(|&t| t != c)
                .map(|t| confusion[t][c] as f64)
                .sum();
            let fn_: f64 = (0..k)
                .filter(|&p| p != c)
                .map(|p| confusion[c][p] as f64)
                .sum();
            let denom = 2.0 * tp + fp + fn_;
            per_class_f1[c] = if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
        }
        let total_f = total as f64;
        let weighted_f1 = per_class_f1
            .iter()
            .zip(&support)
            .map(|(f1, &s)| (s as f64 / total_f) * f1)
            .sum();
        Self {
            accuracy: trace as f64 / total_f,
            weighted_f1,
            per_class_f1,
            confusion,
            support,
        }
    }

    /// Row-normalized confusion matrix; rows with zero support stay all-zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.confusion
            .iter()
            .zip(&self.support)
            .map(|(row, &s)| {
                if s == 0 {
                    vec![0.0; row.len()]
                } else {
                    row.iter().map(|&v| v as f64 / s as f64).collect()
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let pairs: Vec<(usize, usize)> = (0..12).map(|i| (i % 3, i % 3)).collect();
        let r = EvalReport::from_pairs(&pairs, 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.weighted_f1, 1.0);
        for c in 0..3 {
            assert_eq!(r.confusion[c][c], 4);
        }
    }

    #[test]
    fn hand_case_two_classes() {
        // Truth (0,0,0,1), predictions (0,0,0,0):
        // class-0 F1 = 6/7, class-1 F1 = 0, weighted = 0.75 * 6/7.
        let pairs = [(0, 0), (0, 0), (0, 0), (1, 0)];
        let r = EvalReport::from_pairs(&pairs, 2).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert!((r.per_class_f1[0] - 6.0 / 7.0).abs() < 1e-15);
        assert_eq!(r.per_class_f1[1], 0.0);
        assert!((r.weighted_f1 - 0.75 * 6.0 / 7.0).abs() < 1e-15);
        assert!((r.weighted_f1 - 0.6428571428571429).abs() < 1e-12);
    }

    #[test]
    fn absent_class_contributes_nothing() {
        let pairs = [(0, 0), (1, 1), (0, 0)];
        let r = EvalReport::from_pairs(&pairs, 3).unwrap();
        assert_eq!(r.support[2], 0);
        assert_eq!(r.per_class_f1[2], 0.0);
        assert_eq!(r.weighted_f1, 1.0);
    }

    #[test]
    fn weighted_f1_recomputes_from_confusion() {
        let pairs = [
            (0, 0),
            (0, 1),
            (1, 1),
            (1, 1),
            (2, 0),
            (2, 2),
            (2, 2),
            (1, 2),
        ];
        let r = EvalReport::from_pairs(&pairs, 3).unwrap();
        let total: u64 = r.support.iter().sum();
        let recomputed: f64 = r
            .per_class_f1
            .iter()
            .zip(&r.support)
            .map(|(f1, &s)| f1 * s as f64 / total as f64)
            .sum();
        assert!((r.weighted_f1 - recomputed).abs() < 1e-12);
        // Row sums equal support; accuracy equals trace / total.
        for (row, &s) in r.confusion.iter().zip(&r.support) {
            assert_eq!(row.iter().sum::<u64>(), s);
        }
        let trace: u64 = (0..3).map(|i| r.confusion[i][i]).sum();
        assert_eq!(r.accuracy, trace as f64 / total as f64);
    }

    #[test]
    fn row_normalization_skips_empty_rows() {
        let pairs = [(0, 0), (0, 1), (1, 1)];
        let r = EvalReport::from_pairs(&pairs, 3).unwrap();
        let norm = r.row_normalized();
        assert!((norm[0].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((norm[1].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(norm[2], vec![0.0, 0.0, 0.0]);
    }
}
