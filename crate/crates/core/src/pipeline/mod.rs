//! End-to-end stages: extraction, grading, evaluation, paraphrases.

mod config;
mod stages;

pub use config::{LoadedConfig, RunConfig, Workflow};
pub use stages::{
    decision_summary, evaluate_run, generate_variants, grade_all, load_submissions, load_truth,
    paraphrase_robustness, read_transcripts, record_run, run_extraction, write_transcripts, Evaluation,
    ExtractIssue, ExtractOutput, GradedItem, Robustness, TruthEntry,
};

use crate::backend::BackendError;
use crate::engine::EngineError;
use crate::extract::LayoutError;
use crate::metrics::MetricsError;
use crate::model::ConfigError;
use crate::store::StoreError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no comparable items between the run and the ground truth")]
    NoComparableItems,
    #[error("cannot write output: {0}")]
    Output(String),
}

impl PipelineError {
    /// True for failures of a model service rather than of local inputs.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            PipelineError::Backend(_)
                | PipelineError::Engine(EngineError::Backend { .. } | EngineError::Paraphrase { .. })
        )
    }
}
