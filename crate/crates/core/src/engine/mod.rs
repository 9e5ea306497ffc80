//! Sampling, rule scoring, aggregation and the σ-confidence decision.

mod aggregate;
mod sampling;
mod scoring;

pub use aggregate::{
    aggregate_majority, aggregate_mean, sigma_decision, sigma_decision_sd, CannotDecideReason, Decision,
    MajorityVote, Spread,
};
pub use sampling::{
    aggregate_item, grade_answer, grade_cells, AggregateGrade, Aggregation, DroppedCell, GradingMode, GradingSettings,
    SampleGrade, SampleSet, SamplingPlan, RETRY_STRIDE,
};
pub use scoring::{score_rules, RuleScore};

use crate::backend::{Backend, BackendError, ModelRequest, UserPart};
use crate::model::GradingRule;
use crate::prompt::render_paraphrase_prompt;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("only {valid} valid samples; at least 2 are needed for mean aggregation")]
    DegenerateSampleSet { valid: usize },
    #[error("backend failed for student `{student_id}`, problem `{problem_id}`{}: {source}", cell.as_ref().map(|c| format!(", {c}")).unwrap_or_default())]
    Backend {
        student_id: String,
        problem_id: String,
        cell: Option<String>,
        #[source]
        source: BackendError,
    },
    #[error("paraphrase generation for rule `{rule_id}` failed: {source}")]
    Paraphrase {
        rule_id: String,
        #[source]
        source: BackendError,
    },
    #[error("engine configuration error: {0}")]
    Config(String),
}

/// Ask the backend for `k` paraphrases of a rule and store them on it.
///
/// Paraphrase `i` uses sample index `i`; an empty reply is re-asked once at
/// `i + RETRY_STRIDE` before giving up.
pub async fn generate_rule_variants(
    rule: &mut GradingRule,
    k: usize,
    backend: &dyn Backend,
    temperature: f64,
) -> Result<(), EngineError> {
    if k == 0 {
        return Err(EngineError::Config("number of rule variants must be at least 1".into()));
    }
    let prompt = render_paraphrase_prompt(&rule.text).map_err(|e| EngineError::Config(e.to_string()))?;
    let request = ModelRequest {
        backend_name: backend.name().to_string(),
        system_prompt: String::new(),
        user_parts: vec![UserPart::text(prompt)],
        temperature,
        max_output: 512,
        request_tag: "paraphrase".into(),
    };
    let wrap = |source| EngineError::Paraphrase {
        rule_id: rule.rule_id.clone(),
        source,
    };
    let mut variants = Vec::with_capacity(k);
    for i in 0..k as u64 {
        let mut text = backend.complete(&request, i).await.map_err(wrap)?.text;
        if text.trim().is_empty() {
            text = backend.complete(&request, i + RETRY_STRIDE).await.map_err(wrap)?.text;
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(wrap(BackendError::InvalidRequest(format!(
                "empty paraphrase {i} for rule `{}`",
                rule.rule_id
            ))));
        }
        variants.push(text.to_string());
    }
    rule.paraphrases = variants;
    Ok(())
}
