use serde::{Deserialize, Serialize};

use crate::engine::Decision;
use crate::model::Points;

/// Confidence outcome of one graded item against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyItem {
    pub decision: Decision,
    /// Grade the item would have received had it been decided.
    pub snapped: Points,
    pub truth: Points,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Fraction of items the criterion was confident about.
    pub fn positive_rate(&self) -> Option<f64> {
        ratio(self.tp + self.fp, self.total())
    }
}

/// Rows: correct / incorrect. Columns: can / cannot decide.
/// Unanswered items are skipped.
pub fn build_contingency<'a>(items: impl IntoIterator<Item = &'a ContingencyItem>) -> ContingencyTable {
    let mut t = ContingencyTable::default();
    for item in items {
        match item.decision {
            Decision::CanDecide { value } if value == item.truth => t.tp += 1,
            Decision::CanDecide { .. } => t.fp += 1,
            Decision::CannotDecide { .. } if item.snapped == item.truth => t.fn_ += 1,
            Decision::CannotDecide { .. } => t.tn += 1,
            Decision::Unanswered => {}
        }
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContingencyMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub fp_rate: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Undefined rates (zero denominator) are `None`.
pub fn contingency_metrics(t: &ContingencyTable) -> ContingencyMetrics {
    let total = t.total();
    let precision = ratio(t.tp, t.tp + t.fp);
    let recall = ratio(t.tp, t.tp + t.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    ContingencyMetrics {
        accuracy: ratio(t.tp + t.tn, total),
        precision,
        recall,
        f1,
        fp_rate: ratio(t.fp, total),
    }
}
