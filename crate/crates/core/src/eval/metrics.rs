//! Detection and localization metrics over evaluation units.

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    /// Nothing was predicted positive, so precision is reported as 0.
    pub precision_degenerate: bool,
    /// The truth has no positives, so recall is reported as 0.
    pub recall_degenerate: bool,
}

impl PointMetrics {
    /// Fraction of truly negative units that were flagged.
    pub fn false_positive_rate(&self) -> f64 {
        let neg = self.counts.fp + self.counts.tn;
        if neg == 0 {
            0.0
        } else {
            self.counts.fp as f64 / neg as f64
        }
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn point_metrics(predicted: &[bool], truth: &[bool]) -> Result<PointMetrics, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::Length {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Ok(PointMetrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
        counts: c,
        precision_degenerate: c.tp + c.fp == 0,
        recall_degenerate: c.tp + c.fn_ == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationMetrics {
    pub k: usize,
    /// Share of attacked buses found among the top `k`.
    pub hit_at_k: f64,
    /// Average 1-based rank of the attacked buses.
    pub mean_rank: f64,
}

/// `ranked` lists every bus, most suspicious first.
pub fn localization_metrics(ranked: &[usize], truth: &[usize], k: usize) -> Result<LocalizationMetrics, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    let mut ranks = Vec::with_capacity(truth.len());
    for bus in truth {
        let pos = ranked
            .iter()
            .position(|b| b == bus)
            .ok_or(EvalError::UnrankedBus(*bus))?;
        ranks.push(pos + 1);
    }
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(LocalizationMetrics {
        k,
        hit_at_k: hits as f64 / truth.len() as f64,
        mean_rank: ranks.iter().sum::<usize>() as f64 / ranks.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let t = [true, false, true, false];
        let m = point_metrics(&t, &t).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        assert_eq!(m.counts.total(), 4);
    }

    #[test]
    fn silent_detector_is_degenerate() {
        let m = point_metrics(&[false; 3], &[true, false, true]).unwrap();
        assert!(m.precision_degenerate && !m.recall_degenerate);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn length_mismatch() {
        assert!(point_metrics(&[true], &[true, false]).is_err());
    }

    #[test]
    fn localization_examples() {
        let m = localization_metrics(&[7, 3, 9, 1], &[3, 7], 2).unwrap();
        assert_eq!((m.hit_at_k, m.mean_rank), (1.0, 1.5));
        let m = localization_metrics(&[7, 3, 9, 1], &[1], 3).unwrap();
        assert_eq!((m.hit_at_k, m.mean_rank), (0.0, 4.0));
        assert!(localization_metrics(&[1, 2], &[], 1).is_err());
        assert!(localization_metrics(&[1, 2], &[5], 1).is_err());
    }
}
