//! Prompt templates and reply parsing.

mod parse;
mod templates;

pub use parse::{parse_judgement, parse_points, JudgementOutcome, PointsOutcome, Verdict};
pub use templates::{
    judgement_system, render_free_prompt, render_paraphrase_prompt, render_rule_prompt,
    render_transcription_prompt, template_catalog, JudgementFormat, RenderedPrompt, FREE_SYSTEM,
    PARAPHRASE_INSTRUCTION, TRANSCRIPTION_SYSTEM,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("prompt configuration error: {0}")]
    Config(String),
    #[error("cannot parse model reply: {0}")]
    Parse(String),
}
