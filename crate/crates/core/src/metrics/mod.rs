//! Agreement and confidence-quality statistics.

mod agreement;
mod contingency;
mod report;

pub use agreement::{
    accuracy, krippendorff_alpha, robustness_alpha, AlphaScale, CoincidenceMatrix, GradePairSeries,
};
pub use contingency::{
    build_contingency, contingency_metrics, ContingencyItem, ContingencyMetrics, ContingencyTable,
};
pub use report::{evaluate, EvalItem, EvaluationReport, ProblemReport};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty series")]
    EmptySeries,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("alpha is undefined: all values are identical")]
    UndefinedAlpha,
    #[error("grade vectors differ in length: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
}
