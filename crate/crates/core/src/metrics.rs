//! Classification metrics: accuracy, per-class precision/recall/F1,
//! support-weighted F1 and the confusion matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Accuracy on utterances whose previous utterance has the opposite polarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ShiftSubsetReport {
    pub pos_to_neg_accuracy: Option<f64>,
    pub pos_to_neg_count: usize,
    pub neg_to_pos_accuracy: Option<f64>,
    pub neg_to_pos_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    /// F1 of class 1, reported for two-class problems.
    pub binary_f1: Option<f64>,
    /// `confusion[truth][pred]`
    pub confusion: Vec<Vec<usize>>,
    pub shift: Option<ShiftSubsetReport>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics for `k` classes. Classes with neither support nor predictions get
/// zero F1 and, having zero support, zero weight.
pub fn classification_report(truth: &[usize], pred: &[usize], k: usize) -> Result<MetricsReport> {
    if truth.len() != pred.len() {
        return Err(Error::shape(
            "classification_report",
            format!("{} labels vs {} predictions", truth.len(), pred.len()),
        ));
    }
    if truth.is_empty() {
        return Err(Error::Empty("no labels to evaluate".into()));
    }
    if k == 0 {
        return Err(Error::Invalid("number of classes must be positive".into()));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= k || p >= k {
            return Err(Error::Invalid(format!(
                "label pair ({t}, {p}) outside {k} classes"
            )));
        }
        confusion[t][p] += 1;
    }
    let n = truth.len();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let weighted_f1 = per_class
        .iter()
        .map(|m| m.f1 * m.support as f64 / n as f64)
        .sum();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64;
    Ok(MetricsReport {
        n,
        accuracy: ratio(correct, n),
        binary_f1: (k == 2).then(|| per_class[1].f1),
        per_class,
        weighted_f1,
        macro_f1,
        confusion,
        shift: None,
    })
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
