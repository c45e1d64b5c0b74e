use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Confusion counts for one turn's evidence selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Score a selected index set against per-result labels (`labels[0]` is
/// result 1).
///
/// Indices beyond the result list count as false positives; their number is
/// returned alongside the counts.
pub fn useful_confusion(pred: &BTreeSet<usize>, labels: &[bool]) -> (ConfusionCounts, usize) {
    let mut c = ConfusionCounts::default();
    for (i, &positive) in labels.iter().enumerate() {
        match (pred.contains(&(i + 1)), positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    let out_of_range = pred.iter().filter(|&&i| i == 0 || i > labels.len()).count();
    c.fp += out_of_range as u64;
    (c, out_of_range)
}

/// Matthews correlation coefficient; zero whenever a marginal is empty,
/// which covers every constant predictor.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    ((tp * tn - fp * fn_) / denom.sqrt()).clamp(-1.0, 1.0)
}
